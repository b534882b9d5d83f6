//! Tuning-parameter selection: rolling-window predictive cross-validation
//! on the target variable, with AIC and BIC as in-sample alternatives.
//!
//! Cross-validation walks a fixed-width window across the panel. Each fold
//! fits every grid point on its window alone, forecasts the target
//! `horizon` steps past the window, and scores the squared error against
//! the realized value. Nothing past the window's last row enters a fold's
//! fit, so the errors are honest out-of-sample quantities; the realized
//! value itself is of course taken from the future row being predicted.

use nalgebra::DMatrix;

use crate::analysis::forecast_h_step;
use crate::error::{Error, ErrorKind, Result};
use crate::estimate::{fit_map_warm, FitSettings, MapEstimate, WarmStart};
use crate::path::PenaltyGrid;
use crate::penalty::{CovPenalty, PenaltySpec};
use crate::system::ModelSpec;
use crate::TimeSeriesPanel;

/// Settings for rolling cross-validation.
#[derive(Clone, Debug)]
pub struct CvConfig {
    /// Observations per training window.
    pub window: usize,
    /// Forecast steps past the window's last row.
    pub horizon: usize,
    /// Column whose prediction error is scored.
    pub target_index: usize,
    pub grid: PenaltyGrid,
    /// Identifiability floor: the window must hold at least this many
    /// observations per variable.
    pub window_floor: usize,
}

impl CvConfig {
    /// One-step-ahead selection over `grid` with the default 80-row window.
    pub fn new(target_index: usize, grid: PenaltyGrid) -> Self {
        CvConfig {
            window: 80,
            horizon: 1,
            target_index,
            grid,
            window_floor: 3,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    fn validate(&self, panel: &TimeSeriesPanel) -> Result<()> {
        self.grid.validate()?;
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be at least 1".into()));
        }
        if self.target_index >= panel.width() {
            return Err(Error::InvalidSpec(format!(
                "target index {} out of range for {} columns",
                self.target_index,
                panel.width()
            )));
        }
        let floor = panel.width() * self.window_floor;
        if self.window < floor {
            return Err(Error::InvalidSpec(format!(
                "window of {} is below the identifiability floor {floor} \
                 ({} variables x {})",
                self.window,
                panel.width(),
                self.window_floor
            )));
        }
        if panel.len() < self.window + self.horizon {
            return Err(Error::InvalidSpec(format!(
                "need at least {} rows for window {} and horizon {}, got {}",
                self.window + self.horizon,
                self.window,
                self.horizon,
                panel.len()
            )));
        }
        Ok(())
    }
}

/// Mean squared prediction error of one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvEntry {
    pub lambda: f64,
    pub gamma: f64,
    pub mean_squared_error: f64,
}

/// Cross-validation scores over the whole grid.
#[derive(Clone, Debug)]
pub struct CvResult {
    /// Per-point mean squared errors, gamma-major in grid order. Infinite
    /// for points whose fit failed numerically on some fold.
    pub table: Vec<CvEntry>,
    pub fold_count: usize,
    /// The error-minimizing pair, ties broken toward larger penalties.
    pub best: (f64, f64),
    /// Squared errors per fold (rows) and grid point (columns).
    pub per_fold_errors: DMatrix<f64>,
}

/// Rolling one-step (or `horizon`-step) predictive cross-validation.
///
/// A grid point whose fit fails numerically on some fold gets an infinite
/// error there, making the point unselectable without aborting the sweep;
/// near-singular windows routinely defeat the hardest penalty settings
/// while the rest of the grid is fine. The sweep itself only fails when
/// every grid point is unusable.
pub fn rolling_cv(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    config: &CvConfig,
) -> Result<CvResult> {
    rolling_cv_with(
        panel,
        model,
        spec_template,
        cov_template,
        config,
        &FitSettings::default(),
    )
}

pub fn rolling_cv_with(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    config: &CvConfig,
    settings: &FitSettings,
) -> Result<CvResult> {
    config.validate(panel)?;
    let w = config.window;
    let h = config.horizon;
    let fold_count = panel.len() - w - h + 1;
    let n_points = config.grid.len();
    let target = config.target_index;

    let run_fold = |k: usize| -> Result<(Vec<f64>, Option<String>)> {
        let window = panel.window(k, k + w)?;
        let realized = panel.row(k + w - 1 + h)[target];
        let mut errors = Vec::with_capacity(n_points);
        let mut failure = None;
        // Carries the previous gamma chain's head solution into the next
        // chain. Adjacent gammas have nearby solutions, so this spares the
        // covariance solver a cold start on every chain but the first.
        let mut head_sigma = None;
        for &gamma in &config.grid.gamma_values {
            let cov = cov_template.clone().with_gamma(gamma);
            let mut warm_b = None;
            let mut warm_sigma = head_sigma.clone();
            for (li, &lambda) in config.grid.lambda_values.iter().enumerate() {
                let spec = spec_template.clone().with_lambda(lambda);
                let warm = WarmStart {
                    coefficients: warm_b.as_ref(),
                    sigma: warm_sigma.as_ref(),
                };
                let outcome =
                    fit_map_warm(&window, model, &spec, &cov, settings, warm).and_then(|est| {
                        let fc = forecast_h_step(&est, &window.last_row(), h)?[target];
                        Ok((est, fc))
                    });
                let (est, forecast) = match outcome {
                    Ok(pair) => pair,
                    Err(e) if e.kind() == ErrorKind::Numerical => {
                        failure.get_or_insert_with(|| e.to_string());
                        errors.push(f64::INFINITY);
                        // The last good estimate stays behind as the warm
                        // start for the next point.
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                errors.push((realized - forecast) * (realized - forecast));
                warm_b = Some(est.coefficients.stacked());
                if li == 0 {
                    head_sigma = Some(est.sigma.clone());
                }
                warm_sigma = Some(est.sigma);
            }
        }
        Ok((errors, failure))
    };

    #[cfg(feature = "parallel")]
    let fold_rows: Result<Vec<(Vec<f64>, Option<String>)>> = {
        use rayon::prelude::*;
        (0..fold_count).into_par_iter().map(run_fold).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fold_rows: Result<Vec<(Vec<f64>, Option<String>)>> =
        (0..fold_count).map(run_fold).collect();
    let fold_rows = fold_rows?;
    let failure_note = fold_rows.iter().find_map(|(_, f)| f.clone());

    let per_fold_errors = DMatrix::from_fn(fold_count, n_points, |k, j| fold_rows[k].0[j]);
    let mut table = Vec::with_capacity(n_points);
    let mut j = 0;
    for &gamma in &config.grid.gamma_values {
        for &lambda in &config.grid.lambda_values {
            let mse = per_fold_errors.column(j).sum() / fold_count as f64;
            table.push(CvEntry {
                lambda,
                gamma,
                mean_squared_error: mse,
            });
            j += 1;
        }
    }
    let best = argmin_with_ties(table.iter().map(|e| (e.lambda, e.gamma, e.mean_squared_error)));
    if !best.0.is_finite() {
        return Err(Error::NoConvergence {
            context: format!(
                "every grid point failed on at least one fold; first failure: {}",
                failure_note.unwrap_or_else(|| "unknown".into())
            ),
            iterations: fold_count,
        });
    }
    Ok(CvResult {
        table,
        fold_count,
        best,
        per_fold_errors,
    })
}

/// Picks the score minimum; exact score ties go to the larger lambda, then
/// the larger gamma, so duplicated shrinkage levels resolve deterministically.
fn argmin_with_ties(entries: impl Iterator<Item = (f64, f64, f64)>) -> (f64, f64) {
    let mut best = (f64::NAN, f64::NAN);
    let mut best_score = f64::INFINITY;
    for (lambda, gamma, score) in entries {
        let better = score < best_score
            || (score == best_score
                && (lambda > best.0 || (lambda == best.0 && gamma > best.1)));
        if better {
            best = (lambda, gamma);
            best_score = score;
        }
    }
    best
}

/// Which information criterion to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IcKind {
    Aic,
    Bic,
}

/// Information criterion of a fit: `2k + 2l` for AIC, `k ln(T) + 2l` for
/// BIC, with `l` the negative log-likelihood. The parameter count `k` is
/// the number of nonzero coefficients, matching the usual reading of model
/// size as predictors selected.
pub fn information_criterion(fit: &MapEstimate, t: f64, kind: IcKind) -> f64 {
    ic_value(fit, t, kind, false)
}

/// Variant that also counts the free covariance entries: `m(m+1)/2` minus
/// the off-diagonal entries the penalty zeroed exactly.
pub fn information_criterion_with_sigma(fit: &MapEstimate, t: f64, kind: IcKind) -> f64 {
    ic_value(fit, t, kind, true)
}

fn ic_value(fit: &MapEstimate, t: f64, kind: IcKind, count_sigma: bool) -> f64 {
    let mut k = fit.coefficients.count_nonzero() as f64;
    if count_sigma {
        let m = fit.sigma.nrows();
        let mut free = m * (m + 1) / 2;
        for i in 0..m {
            for j in (i + 1)..m {
                if fit.sigma[(i, j)] == 0.0 {
                    free -= 1;
                }
            }
        }
        k += free as f64;
    }
    let per_param = match kind {
        IcKind::Aic => 2.0,
        IcKind::Bic => t.ln(),
    };
    per_param * k + 2.0 * fit.neg_log_likelihood
}

/// How to pick the tuning pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionCriterion {
    /// Rolling predictive cross-validation.
    Cv,
    Aic,
    Bic,
}

/// One grid point's score under the chosen criterion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreEntry {
    pub lambda: f64,
    pub gamma: f64,
    pub score: f64,
}

/// The winning pair and the scores behind it.
#[derive(Clone, Debug)]
pub struct SelectionResult {
    pub criterion: SelectionCriterion,
    pub lambda: f64,
    pub gamma: f64,
    /// All grid scores, gamma-major in grid order.
    pub scores: Vec<ScoreEntry>,
    /// Fold-level detail when the criterion was cross-validation.
    pub cv: Option<CvResult>,
}

/// Grid search under the chosen criterion. Cross-validation scores each
/// point out of sample; AIC and BIC fit the full panel once per point.
pub fn select(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    config: &CvConfig,
    criterion: SelectionCriterion,
) -> Result<SelectionResult> {
    select_with(
        panel,
        model,
        spec_template,
        cov_template,
        config,
        criterion,
        &FitSettings::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn select_with(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    config: &CvConfig,
    criterion: SelectionCriterion,
    settings: &FitSettings,
) -> Result<SelectionResult> {
    match criterion {
        SelectionCriterion::Cv => {
            let cv = rolling_cv_with(panel, model, spec_template, cov_template, config, settings)?;
            let scores = cv
                .table
                .iter()
                .map(|e| ScoreEntry {
                    lambda: e.lambda,
                    gamma: e.gamma,
                    score: e.mean_squared_error,
                })
                .collect();
            Ok(SelectionResult {
                criterion,
                lambda: cv.best.0,
                gamma: cv.best.1,
                scores,
                cv: Some(cv),
            })
        }
        SelectionCriterion::Aic | SelectionCriterion::Bic => {
            config.grid.validate()?;
            let kind = if criterion == SelectionCriterion::Aic {
                IcKind::Aic
            } else {
                IcKind::Bic
            };
            let (fits, failure_note) = fit_grid(
                panel,
                model,
                &config.grid,
                spec_template,
                cov_template,
                settings,
            )?;
            let scores: Vec<ScoreEntry> = fits
                .iter()
                .map(|(lambda, gamma, est)| ScoreEntry {
                    lambda: *lambda,
                    gamma: *gamma,
                    score: est.as_ref().map_or(f64::INFINITY, |e| {
                        information_criterion(e, e.n_obs as f64, kind)
                    }),
                })
                .collect();
            let best =
                argmin_with_ties(scores.iter().map(|e| (e.lambda, e.gamma, e.score)));
            if !best.0.is_finite() {
                return Err(Error::NoConvergence {
                    context: format!(
                        "every grid point failed to fit; first failure: {}",
                        failure_note.unwrap_or_else(|| "unknown".into())
                    ),
                    iterations: fits.len(),
                });
            }
            Ok(SelectionResult {
                criterion,
                lambda: best.0,
                gamma: best.1,
                scores,
                cv: None,
            })
        }
    }
}

/// One swept grid point: the pair itself and the fit, absent when the
/// solver failed numerically there.
type GridFit = (f64, f64, Option<MapEstimate>);

/// Fits every grid point on the full panel, warm-starting each lambda
/// chain, gamma-major like the path tracer. Numerical failures leave a
/// hole rather than aborting; the second value reports the first failure
/// message for diagnostics.
fn fit_grid(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    grid: &PenaltyGrid,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    settings: &FitSettings,
) -> Result<(Vec<GridFit>, Option<String>)> {
    let run_chain = |gamma: f64| -> Result<(Vec<GridFit>, Option<String>)> {
        let cov = cov_template.clone().with_gamma(gamma);
        let mut chain = Vec::with_capacity(grid.lambda_values.len());
        let mut failure = None;
        let mut warm_b = None;
        let mut warm_sigma = None;
        for &lambda in &grid.lambda_values {
            let spec = spec_template.clone().with_lambda(lambda);
            let warm = WarmStart {
                coefficients: warm_b.as_ref(),
                sigma: warm_sigma.as_ref(),
            };
            match fit_map_warm(panel, model, &spec, &cov, settings, warm) {
                Ok(est) => {
                    warm_b = Some(est.coefficients.stacked());
                    warm_sigma = Some(est.sigma.clone());
                    chain.push((lambda, gamma, Some(est)));
                }
                Err(e) if e.kind() == ErrorKind::Numerical => {
                    failure.get_or_insert_with(|| e.to_string());
                    chain.push((lambda, gamma, None));
                }
                Err(e) => return Err(e),
            }
        }
        Ok((chain, failure))
    };

    #[cfg(feature = "parallel")]
    let chains: Result<Vec<(Vec<GridFit>, Option<String>)>> = {
        use rayon::prelude::*;
        grid.gamma_values.par_iter().map(|&g| run_chain(g)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chains: Result<Vec<(Vec<GridFit>, Option<String>)>> =
        grid.gamma_values.iter().map(|&g| run_chain(g)).collect();
    let chains = chains?;
    let failure = chains.iter().find_map(|(_, f)| f.clone());
    Ok((chains.into_iter().flat_map(|(c, _)| c).collect(), failure))
}
