//! Loading CSV datasets into panels, plus principal component extraction.
//!
//! A [`DatasetManifest`] describes a CSV file: where it lives, how its dates
//! are written, which column is the forecast target, and which columns serve
//! as predictors. [`load_panel`] turns the manifest into a
//! [`TimeSeriesPanel`], applying any declared column transforms along the
//! way. Rows may arrive in any order; the loader sorts them by date and
//! rejects duplicates and calendar gaps with the offending file rows named.
//!
//! [`compute_principal_components`] condenses a wide panel into a small set
//! of factor scores, the usual first step when more candidate predictors are
//! available than a vector autoregression can carry.

use std::fs::File;
use std::io::Read;
use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Frequency, Period, TimeSeriesPanel};

/// A per-column rewrite applied while loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    /// Keep the raw values.
    None,
    /// Natural logarithm. Nonpositive values are rejected.
    Log,
    /// First difference. Consumes one leading observation, so every column
    /// of the finished panel loses its first row.
    Diff,
    /// Subtract the named column pointwise. The subtrahend may be any CSV
    /// column; it does not have to end up in the panel itself.
    ExcessOver(String),
}

/// One transform step: which column it touches and what happens to it.
///
/// Steps run in the order they are declared, so `log` followed by `diff` on
/// the same column produces log returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformStep {
    pub column: String,
    pub transform: Transform,
}

/// Description of a CSV dataset.
///
/// The manifest is ordinary JSON, e.g.
///
/// ```json
/// {
///   "path": "quarterly.csv",
///   "date_column": "date",
///   "date_format": "%YQ%q",
///   "frequency": "quarterly",
///   "target": "premium",
///   "predictors": ["dp", "tbl"],
///   "transforms": [
///     { "column": "dp", "transform": "log" },
///     { "column": "premium", "transform": { "excess-over": "rf" } }
///   ]
/// }
/// ```
///
/// Three date formats are understood: `%Y-%m-%d` (ISO dates), `%Y-%m`, and
/// `%YQ%q` (e.g. `1952Q1`). Daily and monthly stamps are coerced to the
/// declared [`Frequency`], so a quarterly panel may be indexed by
/// month-end dates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub date_column: String,
    pub date_format: String,
    pub frequency: Frequency,
    /// Column the forecasting exercises predict. Becomes column 0 of the
    /// loaded panel.
    pub target: String,
    pub predictors: Vec<String>,
    #[serde(default)]
    pub transforms: Vec<TransformStep>,
}

const DATE_FORMATS: [&str; 3] = ["%Y-%m-%d", "%Y-%m", "%YQ%q"];

impl DatasetManifest {
    /// Checks the manifest for internal contradictions before any file IO.
    pub fn validate(&self) -> Result<()> {
        if !DATE_FORMATS.contains(&self.date_format.as_str()) {
            return Err(Error::InvalidSpec(format!(
                "unsupported date format `{}`; expected one of {:?}",
                self.date_format, DATE_FORMATS
            )));
        }
        if self.date_format == "%YQ%q" && self.frequency != Frequency::Quarterly {
            return Err(Error::InvalidSpec(
                "quarter-stamped dates require a quarterly frequency".into(),
            ));
        }
        if self.target.is_empty() || self.date_column.is_empty() {
            return Err(Error::InvalidSpec(
                "target and date_column must be named".into(),
            ));
        }
        for (i, p) in self.predictors.iter().enumerate() {
            if *p == self.target || self.predictors[..i].contains(p) {
                return Err(Error::InvalidSpec(format!(
                    "predictor `{p}` repeats the target or another predictor"
                )));
            }
        }
        for step in &self.transforms {
            if step.column == self.date_column {
                return Err(Error::InvalidSpec(
                    "the date column cannot be transformed".into(),
                ));
            }
        }
        Ok(())
    }

    /// Panel column names in order: the target, then the predictors.
    pub fn panel_columns(&self) -> Vec<String> {
        let mut cols = Vec::with_capacity(1 + self.predictors.len());
        cols.push(self.target.clone());
        cols.extend(self.predictors.iter().cloned());
        cols
    }
}

/// A column being assembled, with the index of its first valid row. Each
/// differencing pass pushes `start` forward by one.
struct WorkingColumn {
    name: String,
    values: Vec<f64>,
    start: usize,
}

/// Reads the manifest's CSV file into a panel.
///
/// Rows are sorted by their parsed date before anything else happens, so
/// the file order does not matter. Errors carry 1-based file line numbers
/// with the header on line 1.
pub fn load_panel(manifest: &DatasetManifest) -> Result<TimeSeriesPanel> {
    let file = File::open(&manifest.path)?;
    load_panel_from_reader(manifest, file)
}

/// [`load_panel`] on an open reader instead of the manifest's path.
pub fn load_panel_from_reader<R: Read>(
    manifest: &DatasetManifest,
    reader: R,
) -> Result<TimeSeriesPanel> {
    manifest.validate()?;

    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = csv.headers()?.iter().map(str::to_owned).collect();
    let header_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_owned()))
    };

    let date_idx = header_index(&manifest.date_column)?;

    // The working set is every column a transform can see: the panel columns
    // plus any excess-return subtrahends that are not already among them.
    let mut working_names = manifest.panel_columns();
    for step in &manifest.transforms {
        if let Transform::ExcessOver(base) = &step.transform {
            if !working_names.contains(base) {
                working_names.push(base.clone());
            }
        }
    }
    let column_indices: Vec<usize> = working_names
        .iter()
        .map(|n| header_index(n))
        .collect::<Result<_>>()?;

    let mut raw_dates: Vec<(Period, usize)> = Vec::new();
    let mut raw_rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);

        let date_text = record.get(date_idx).unwrap_or("");
        check_date_shape(date_text, &manifest.date_format, line)?;
        let period =
            Period::parse(date_text, manifest.frequency).map_err(|e| Error::Parse {
                row: line,
                message: e.to_string(),
            })?;

        let mut row = Vec::with_capacity(column_indices.len());
        for (&idx, name) in column_indices.iter().zip(&working_names) {
            let cell = record.get(idx).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::MissingValue {
                    row: line,
                    column: name.clone(),
                });
            }
            let value: f64 = cell.parse().map_err(|_| Error::MissingValue {
                row: line,
                column: name.clone(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFiniteValue {
                    row: line,
                    column: name.clone(),
                });
            }
            row.push(value);
        }
        raw_dates.push((period, line));
        raw_rows.push(row);
    }
    if raw_rows.is_empty() {
        return Err(Error::EmptyInput("CSV has a header but no data rows".into()));
    }

    // Sort rows by date and make the index airtight: no repeats, no gaps.
    let mut order: Vec<usize> = (0..raw_rows.len()).collect();
    order.sort_by_key(|&i| raw_dates[i].0);
    for pair in order.windows(2) {
        let (prev, prev_line) = raw_dates[pair[0]];
        let (next, next_line) = raw_dates[pair[1]];
        if next == prev {
            return Err(Error::DuplicateDate {
                date: next.to_string(),
                first_row: prev_line,
                second_row: next_line,
            });
        }
        if next != prev.next() {
            return Err(Error::NonMonotoneDate {
                row: next_line,
                date: format!("{next} does not follow {prev}"),
            });
        }
    }
    let dates: Vec<Period> = order.iter().map(|&i| raw_dates[i].0).collect();
    let lines: Vec<usize> = order.iter().map(|&i| raw_dates[i].1).collect();

    let n = order.len();
    let mut columns: Vec<WorkingColumn> = working_names
        .iter()
        .enumerate()
        .map(|(c, name)| WorkingColumn {
            name: name.clone(),
            values: order.iter().map(|&i| raw_rows[i][c]).collect(),
            start: 0,
        })
        .collect();

    for step in &manifest.transforms {
        let col = columns
            .iter()
            .position(|c| c.name == step.column)
            .ok_or_else(|| Error::UnknownColumn(step.column.clone()))?;
        match &step.transform {
            Transform::None => {}
            Transform::Log => {
                let c = &mut columns[col];
                for t in c.start..n {
                    let v = c.values[t].ln();
                    if !v.is_finite() {
                        return Err(Error::NonFiniteValue {
                            row: lines[t],
                            column: c.name.clone(),
                        });
                    }
                    c.values[t] = v;
                }
            }
            Transform::Diff => {
                let c = &mut columns[col];
                if n - c.start < 2 {
                    return Err(Error::EmptyInput(format!(
                        "differencing `{}` leaves no observations",
                        c.name
                    )));
                }
                for t in (c.start + 1..n).rev() {
                    c.values[t] -= c.values[t - 1];
                }
                c.start += 1;
            }
            Transform::ExcessOver(base) => {
                let b = columns
                    .iter()
                    .position(|c| c.name == *base)
                    .ok_or_else(|| Error::UnknownColumn(base.clone()))?;
                let base_start = columns[b].start;
                let base_values = columns[b].values.clone();
                let c = &mut columns[col];
                c.start = c.start.max(base_start);
                for t in c.start..n {
                    c.values[t] -= base_values[t];
                }
            }
        }
    }

    // Differencing any column shortens the usable sample; the panel keeps
    // only rows where every kept column is valid.
    let kept = 1 + manifest.predictors.len();
    let start = columns[..kept].iter().map(|c| c.start).max().unwrap_or(0);
    if n - start == 0 {
        return Err(Error::EmptyInput(
            "transforms consumed every observation".into(),
        ));
    }
    let values = DMatrix::from_fn(n - start, kept, |r, c| columns[c].values[start + r]);
    let names = working_names[..kept].to_vec();
    TimeSeriesPanel::new(dates[start..].to_vec(), names, values)
}

/// Rejects dates whose shape contradicts the declared format before the
/// permissive parser gets a chance to coerce them.
fn check_date_shape(text: &str, format: &str, line: usize) -> Result<()> {
    let has_quarter = text.contains(['Q', 'q']);
    let dashes = text.matches('-').count();
    let ok = match format {
        "%YQ%q" => has_quarter,
        "%Y-%m" => !has_quarter && dashes == 1,
        "%Y-%m-%d" => !has_quarter && dashes == 2,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Parse {
            row: line,
            message: format!("date `{text}` does not match format `{format}`"),
        })
    }
}

/// Factor scores extracted from a panel, with their loadings and the share
/// of total variance each factor carries.
#[derive(Clone, Debug)]
pub struct PrincipalComponents {
    /// `T x k` scores named `pc1..pck`, on the same date index as the input.
    pub factors: TimeSeriesPanel,
    /// `p x k` loadings; column `i` maps the (standardized) inputs to the
    /// `i`-th factor.
    pub loadings: DMatrix<f64>,
    /// Variance shares in `(0, 1]`, non-increasing, summing to at most 1.
    pub explained: Vec<f64>,
}

/// Extracts the first `k` principal components of a panel.
///
/// Columns are centered and scaled to unit variance first, so the result is
/// driven by correlations rather than by which column happens to have the
/// biggest units. Use [`compute_principal_components_with`] to skip the
/// scaling. Factors come out in descending explained-variance order, and
/// each factor's sign is fixed so its largest-magnitude loading is positive.
pub fn compute_principal_components(
    panel: &TimeSeriesPanel,
    k: usize,
) -> Result<PrincipalComponents> {
    compute_principal_components_with(panel, k, true)
}

/// [`compute_principal_components`] with the unit-variance scaling optional.
pub fn compute_principal_components_with(
    panel: &TimeSeriesPanel,
    k: usize,
    standardize: bool,
) -> Result<PrincipalComponents> {
    let t = panel.len();
    let p = panel.width();
    if k == 0 || k > p {
        return Err(Error::InvalidSpec(format!(
            "cannot extract {k} factors from {p} columns"
        )));
    }
    if t < 2 {
        return Err(Error::EmptyInput(
            "principal components need at least two rows".into(),
        ));
    }

    let mut x = panel.values().clone();
    for c in 0..p {
        let mut col = x.column_mut(c);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        if standardize {
            let sd = (col.norm_squared() / (t - 1) as f64).sqrt();
            if sd <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "column `{}` is constant and cannot be standardized",
                    panel.names()[c]
                )));
            }
            col /= sd;
        }
    }

    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");

    // nalgebra already orders singular values, but the descending order is a
    // promise of this function, so it is enforced here rather than inherited.
    let mut by_size: Vec<usize> = (0..sv.len()).collect();
    by_size.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).expect("finite singular values"));

    let total: f64 = sv.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("panel has no variance".into()));
    }

    let mut loadings = DMatrix::zeros(p, k);
    let mut explained = Vec::with_capacity(k);
    for (i, &j) in by_size.iter().take(k).enumerate() {
        loadings.set_column(i, &v_t.row(j).transpose());
        explained.push(sv[j] * sv[j] / total);
    }

    // Singular vectors are only determined up to sign; anchoring the largest
    // loading makes repeated runs and refactored backends agree.
    for i in 0..k {
        let col = loadings.column(i);
        let anchor = col
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).expect("finite loading"))
            .map(|(j, _)| j)
            .expect("nonempty loading column");
        if col[anchor] < 0.0 {
            loadings.column_mut(i).neg_mut();
        }
    }

    let scores = &x * &loadings;
    let names = (1..=k).map(|i| format!("pc{i}")).collect();
    let factors = TimeSeriesPanel::new(panel.dates().to_vec(), names, scores)?;
    Ok(PrincipalComponents {
        factors,
        loadings,
        explained,
    })
}
