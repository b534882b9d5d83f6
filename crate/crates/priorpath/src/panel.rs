//! Time-indexed data panels.
//!
//! A [`TimeSeriesPanel`] is a dense `T x p` block of observations with a
//! gapless period index. Estimators in this crate demean the panel before
//! building lagged designs; [`demean_panel`] returns the centered panel
//! together with the column means so forecasts can be mapped back to the
//! original scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Sampling frequency of a panel's period index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Monthly,
    Quarterly,
}

impl Frequency {
    pub fn periods_per_year(self) -> u8 {
        match self {
            Frequency::Monthly => 12,
            Frequency::Quarterly => 4,
        }
    }
}

/// One calendar period, e.g. `1952Q1` or `1990-07`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    year: i32,
    /// 1-based position within the year, bounded by the frequency.
    index: u8,
    freq: Frequency,
}

impl Period {
    pub fn new(year: i32, index: u8, freq: Frequency) -> Result<Self> {
        if index == 0 || index > freq.periods_per_year() {
            return Err(Error::InvalidSpec(format!(
                "period index {index} out of range for {freq:?}"
            )));
        }
        Ok(Period { year, index, freq })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn index(&self) -> u8 {
        self.index
    }

    pub fn frequency(&self) -> Frequency {
        self.freq
    }

    /// The period immediately after this one.
    pub fn next(&self) -> Period {
        let per_year = self.freq.periods_per_year();
        if self.index == per_year {
            Period {
                year: self.year + 1,
                index: 1,
                freq: self.freq,
            }
        } else {
            Period {
                year: self.year,
                index: self.index + 1,
                freq: self.freq,
            }
        }
    }

    /// `n` consecutive periods starting at `start`.
    pub fn sequence(start: Period, n: usize) -> Vec<Period> {
        let mut out = Vec::with_capacity(n);
        let mut cur = start;
        for _ in 0..n {
            out.push(cur);
            cur = cur.next();
        }
        out
    }

    /// Parses `1952Q1`, `1952-03`, or an ISO date such as `1952-03-31`,
    /// coercing the result to `freq`.
    pub fn parse(text: &str, freq: Frequency) -> Result<Period> {
        let s = text.trim();
        let bad = |msg: &str| Error::Parse {
            row: 0,
            message: format!("cannot parse date `{s}`: {msg}"),
        };

        // Quarter form: YYYYQn or YYYYqn.
        if let Some(pos) = s.find(['Q', 'q']) {
            let year: i32 = s[..pos].parse().map_err(|_| bad("bad year"))?;
            let quarter: u8 = s[pos + 1..].parse().map_err(|_| bad("bad quarter"))?;
            if quarter == 0 || quarter > 4 {
                return Err(bad("quarter out of range"));
            }
            return match freq {
                Frequency::Quarterly => Period::new(year, quarter, freq),
                Frequency::Monthly => Err(bad("quarterly date in a monthly panel")),
            };
        }

        // YYYY-MM or YYYY-MM-DD.
        let mut parts = s.split('-');
        let year: i32 = parts
            .next()
            .filter(|p| !p.is_empty())
            .ok_or_else(|| bad("empty"))?
            .parse()
            .map_err(|_| bad("bad year"))?;
        let month: u8 = parts
            .next()
            .ok_or_else(|| bad("missing month"))?
            .parse()
            .map_err(|_| bad("bad month"))?;
        if month == 0 || month > 12 {
            return Err(bad("month out of range"));
        }
        if let Some(day) = parts.next() {
            let d: u8 = day.parse().map_err(|_| bad("bad day"))?;
            if d == 0 || d > 31 {
                return Err(bad("day out of range"));
            }
        }
        if parts.next().is_some() {
            return Err(bad("trailing fields"));
        }
        match freq {
            Frequency::Monthly => Period::new(year, month, freq),
            Frequency::Quarterly => Period::new(year, (month - 1) / 3 + 1, freq),
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.freq {
            Frequency::Quarterly => write!(f, "{}Q{}", self.year, self.index),
            Frequency::Monthly => write!(f, "{}-{:02}", self.year, self.index),
        }
    }
}

/// A dense panel of `T` observations on `p` named series with a gapless,
/// strictly increasing period index.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesPanel {
    dates: Vec<Period>,
    names: Vec<String>,
    /// Row `t` holds the observation for `dates[t]`.
    values: DMatrix<f64>,
}

impl TimeSeriesPanel {
    pub fn new(dates: Vec<Period>, names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if dates.is_empty() || names.is_empty() {
            return Err(Error::EmptyInput("panel has no rows or no columns".into()));
        }
        if values.nrows() != dates.len() || values.ncols() != names.len() {
            return Err(Error::DimensionMismatch(format!(
                "values are {}x{} but panel declares {} dates and {} columns",
                values.nrows(),
                values.ncols(),
                dates.len(),
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::InvalidSpec(format!("duplicate column name `{name}`")));
            }
        }
        for w in dates.windows(2) {
            if w[1].frequency() != w[0].frequency() {
                return Err(Error::InvalidSpec("mixed frequencies in panel index".into()));
            }
            if w[1] != w[0].next() {
                return Err(Error::NonMonotoneDate {
                    row: 0,
                    date: format!("{} does not follow {}", w[1], w[0]),
                });
            }
        }
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                if !values[(r, c)].is_finite() {
                    return Err(Error::NonFiniteValue {
                        row: r,
                        column: names[c].clone(),
                    });
                }
            }
        }
        Ok(TimeSeriesPanel {
            dates,
            names,
            values,
        })
    }

    /// Convenience constructor indexing rows by consecutive periods from `start`.
    pub fn with_start(start: Period, names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let dates = Period::sequence(start, values.nrows());
        TimeSeriesPanel::new(dates, names, values)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dates(&self) -> &[Period] {
        &self.dates
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, idx: usize) -> DVector<f64> {
        self.values.column(idx).into_owned()
    }

    /// Column means, computed as plain left-to-right sums divided by `T`.
    pub fn means(&self) -> DVector<f64> {
        let t = self.len() as f64;
        DVector::from_iterator(
            self.width(),
            self.values.column_iter().map(|c| c.iter().sum::<f64>() / t),
        )
    }

    /// The sub-panel of rows `start..end` (end exclusive).
    pub fn window(&self, start: usize, end: usize) -> Result<TimeSeriesPanel> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidSpec(format!(
                "window {start}..{end} out of range for {} rows",
                self.len()
            )));
        }
        Ok(TimeSeriesPanel {
            dates: self.dates[start..end].to_vec(),
            names: self.names.clone(),
            values: self.values.rows(start, end - start).into_owned(),
        })
    }

    /// The sub-panel of the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<TimeSeriesPanel> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<_>>()?;
        let mut values = DMatrix::zeros(self.len(), idx.len());
        for (k, &c) in idx.iter().enumerate() {
            values.set_column(k, &self.values.column(c));
        }
        TimeSeriesPanel::new(self.dates.clone(), names.to_vec(), values)
    }

    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    pub fn last_row(&self) -> DVector<f64> {
        self.row(self.len() - 1)
    }
}

/// Subtracts column means, returning the centered panel and the means.
///
/// The means vector uses the panel's column order. Centering a panel twice
/// leaves it unchanged apart from the zero means returned.
pub fn demean_panel(panel: &TimeSeriesPanel) -> Result<(TimeSeriesPanel, DVector<f64>)> {
    if panel.is_empty() {
        return Err(Error::EmptyInput("cannot demean an empty panel".into()));
    }
    let means = panel.means();
    let mut values = panel.values.clone();
    for c in 0..values.ncols() {
        let m = means[c];
        for r in 0..values.nrows() {
            values[(r, c)] -= m;
        }
    }
    Ok((
        TimeSeriesPanel {
            dates: panel.dates.clone(),
            names: panel.names.clone(),
            values,
        },
        means,
    ))
}
