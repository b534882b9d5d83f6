//! Market-timing backtest: each period a strategy refits its model on the
//! trailing window with frozen penalties, forecasts the target one step
//! ahead, and splits the portfolio between the equity leg and the risk-free
//! leg by a capped mean-variance rule. A buy-and-hold benchmark holds its
//! initial split and drifts with returns.
//!
//! Rebalancing happens once per panel row, the native frequency of the
//! quarterly panels this module is built around.

use crate::analysis::forecast_one_step;
use crate::error::{Error, Result};
use crate::estimate::{fit_map_warm, FitSettings, WarmStart};
use crate::panel::TimeSeriesPanel;
use crate::path::PenaltyGrid;
use crate::penalty::{CovPenalty, PenaltySpec};
use crate::select::{select_with, CvConfig, SelectionCriterion};
use crate::system::ModelSpec;

/// A timing rule evaluated by [`run_market_timing`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Penalized fit at the pair chosen by rolling cross-validation on the
    /// tuning span.
    CvOptimal,
    /// Penalized fit at the pair chosen by AIC on the tuning span.
    AicOptimal,
    /// Unpenalized fit, lambda = gamma = 0.
    VarUnregularized,
    /// Forecast equals the trailing window mean of the target; no model.
    MovingAverage,
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::CvOptimal => "cv_optimal",
            Strategy::AicOptimal => "aic_optimal",
            Strategy::VarUnregularized => "var_unregularized",
            Strategy::MovingAverage => "moving_average",
        }
    }
}

/// A penalty pair fixed on the tuning span and held constant through the
/// evaluation span.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrozenPenalties {
    pub lambda: f64,
    pub gamma: f64,
}

/// Frozen pairs for the strategies that need one. `var_unregularized` and
/// `moving_average` carry no tuning state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrozenChoices {
    pub cv: Option<FrozenPenalties>,
    pub aic: Option<FrozenPenalties>,
}

/// Backtest layout and portfolio rule parameters.
#[derive(Clone, Debug)]
pub struct BacktestConfig {
    /// Trailing observations behind each refit, forecast, and variance.
    pub window: usize,
    /// Mean-variance risk aversion; any positive value gives the same
    /// ordinal ranking of weights at a fixed variance, and the chosen value
    /// is echoed into the result.
    pub risk_aversion: f64,
    /// Largest per-period change in the equity weight.
    pub max_turnover: f64,
    /// Equity weight bounds; the defaults forbid shorting and leverage.
    pub weight_bounds: (f64, f64),
    pub strategies: Vec<Strategy>,
    /// Leading rows reserved for penalty selection. Evaluation starts at
    /// `max(window, tuning_rows)`, so the tuning and evaluation spans never
    /// overlap.
    pub tuning_rows: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            window: 80,
            risk_aversion: 2.0,
            max_turnover: 0.5,
            weight_bounds: (0.0, 1.0),
            strategies: vec![
                Strategy::CvOptimal,
                Strategy::AicOptimal,
                Strategy::VarUnregularized,
                Strategy::MovingAverage,
            ],
            tuning_rows: 0,
        }
    }
}

impl BacktestConfig {
    pub fn new(strategies: Vec<Strategy>) -> Self {
        BacktestConfig {
            strategies,
            ..BacktestConfig::default()
        }
    }

    /// First row of the evaluation span.
    pub fn evaluation_start(&self) -> usize {
        self.window.max(self.tuning_rows)
    }

    fn validate(&self, panel: &TimeSeriesPanel, frozen: &FrozenChoices) -> Result<()> {
        if self.window < 3 {
            return Err(Error::InvalidSpec(format!(
                "window must hold at least 3 observations, got {}",
                self.window
            )));
        }
        if !(self.risk_aversion > 0.0) || !self.risk_aversion.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "risk aversion must be positive and finite, got {}",
                self.risk_aversion
            )));
        }
        if !(self.max_turnover > 0.0 && self.max_turnover <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "max turnover must lie in (0, 1], got {}",
                self.max_turnover
            )));
        }
        validate_bounds(self.weight_bounds)?;
        if self.strategies.is_empty() {
            return Err(Error::InvalidSpec(
                "at least one strategy must be requested".into(),
            ));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(Error::InvalidSpec(format!(
                    "strategy {} requested twice",
                    s.label()
                )));
            }
        }
        if panel.len() <= self.evaluation_start() {
            return Err(Error::InvalidSpec(format!(
                "no evaluation periods: panel has {} rows and evaluation starts at row {}",
                panel.len(),
                self.evaluation_start()
            )));
        }
        for s in &self.strategies {
            let missing = match s {
                Strategy::CvOptimal => frozen.cv.is_none(),
                Strategy::AicOptimal => frozen.aic.is_none(),
                _ => false,
            };
            if missing {
                return Err(Error::InvalidSpec(format!(
                    "strategy {} needs penalties frozen on the tuning span",
                    s.label()
                )));
            }
        }
        Ok(())
    }
}

/// Distribution summary in the reporting layout of the study tables:
/// min, quartiles, mean, max, spread, and the mean/sd ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    pub sd: f64,
    /// mean / sd, the table convention for the ratio row.
    pub ratio: f64,
}

/// One strategy's evaluation-span record. Series are aligned: entry `t`
/// holds the forecast made from information before evaluation period `t`,
/// the weight held through that period, and the realized portfolio return.
#[derive(Clone, Debug)]
pub struct StrategyRun {
    pub strategy: Strategy,
    /// Penalties behind the fits; `None` for the model-free strategy.
    pub penalties: Option<FrozenPenalties>,
    pub forecasts: Vec<f64>,
    pub weights: Vec<f64>,
    pub returns: Vec<f64>,
    /// Wealth path from an initial unit stake; leading entry is 1.
    pub wealth: Vec<f64>,
    /// `None` when the forecast series is constant or too short to spread.
    pub forecast_stats: Option<SummaryStats>,
    /// `None` when the return series is constant or too short to spread.
    pub return_stats: Option<SummaryStats>,
}

/// The buy-and-hold benchmark: one initial trade, then drift.
#[derive(Clone, Debug)]
pub struct BenchmarkRun {
    /// Equity share bought at the first evaluation period.
    pub initial_weight: f64,
    /// Equity share held through each period; evolves only through returns.
    pub weights: Vec<f64>,
    pub returns: Vec<f64>,
    pub wealth: Vec<f64>,
    pub return_stats: Option<SummaryStats>,
}

#[derive(Clone, Debug)]
pub struct BacktestResult {
    /// Panel row where the evaluation span begins.
    pub evaluation_start: usize,
    /// Risk aversion behind every weight, echoed from the config.
    pub risk_aversion: f64,
    pub strategies: Vec<StrategyRun>,
    pub benchmark: BenchmarkRun,
}

fn validate_bounds(bounds: (f64, f64)) -> Result<()> {
    let (lo, hi) = bounds;
    if !(lo >= 0.0 && hi <= 1.0 && lo < hi) {
        return Err(Error::InvalidSpec(format!(
            "weight bounds must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// The mean-variance equity share `forecast / (A * variance)`, clipped to
/// `bounds`. A nonpositive forecast lands at the lower bound, so with the
/// default bounds there is never a short position.
pub fn mean_variance_weight(
    forecast: f64,
    variance: f64,
    risk_aversion: f64,
    bounds: (f64, f64),
) -> Result<f64> {
    if !forecast.is_finite() {
        return Err(Error::Degenerate(format!(
            "forecast must be finite, got {forecast}"
        )));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::Degenerate(format!(
            "variance must be positive and finite, got {variance}"
        )));
    }
    if !(risk_aversion > 0.0) || !risk_aversion.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "risk aversion must be positive and finite, got {risk_aversion}"
        )));
    }
    validate_bounds(bounds)?;
    Ok((forecast / (risk_aversion * variance)).clamp(bounds.0, bounds.1))
}

/// Moves from `current` toward `target`, changing the weight by at most
/// `cap` in either direction.
pub fn apply_turnover_cap(current: f64, target: f64, cap: f64) -> f64 {
    current + (target - current).clamp(-cap, cap)
}

/// Sample statistics of `series` with linearly interpolated quartiles and
/// `ratio = mean / sd`. Errors when the series is shorter than 2 or has no
/// spread, since the ratio is undefined there.
pub fn summary_stats(series: &[f64]) -> Result<SummaryStats> {
    if series.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 observations for a spread, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "series contains a non-finite value".into(),
        ));
    }
    let n = series.len();
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |p: f64| -> f64 {
        let h = (n - 1) as f64 * p;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        if lo + 1 < n {
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        } else {
            sorted[lo]
        }
    };
    let mean = series.iter().sum::<f64>() / n as f64;
    let ss = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let sd = (ss / (n - 1) as f64).sqrt();
    if sd == 0.0 {
        return Err(Error::Degenerate(
            "constant series has no spread; the mean/sd ratio is undefined".into(),
        ));
    }
    Ok(SummaryStats {
        min: sorted[0],
        q1: quantile(0.25),
        median: quantile(0.5),
        mean,
        q3: quantile(0.75),
        max: sorted[n - 1],
        sd,
        ratio: mean / sd,
    })
}

/// Unbiased sample variance of `values`.
fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

fn target_index(model: &ModelSpec) -> usize {
    match model {
        ModelSpec::Var(v) => v.target,
        ModelSpec::Sur(s) => s.target_equation,
    }
}

/// Picks the penalty pairs the configured strategies need by running the
/// requested selection criteria on the tuning span, rows
/// `[0, config.tuning_rows)`. The cross-validation window inside the tuning
/// span reuses `config.window`.
pub fn freeze_penalties(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    grid: &PenaltyGrid,
    config: &BacktestConfig,
) -> Result<FrozenChoices> {
    if config.tuning_rows > panel.len() {
        return Err(Error::InvalidSpec(format!(
            "tuning span of {} rows exceeds the panel's {} rows",
            config.tuning_rows,
            panel.len()
        )));
    }
    let mut frozen = FrozenChoices::default();
    let needs_cv = config.strategies.contains(&Strategy::CvOptimal);
    let needs_aic = config.strategies.contains(&Strategy::AicOptimal);
    if !(needs_cv || needs_aic) {
        return Ok(frozen);
    }
    let tuning = panel.window(0, config.tuning_rows)?;
    let cv_config = CvConfig::new(target_index(model), grid.clone()).with_window(config.window);
    if needs_cv {
        let choice = select_with(
            &tuning,
            model,
            spec_template,
            cov_template,
            &cv_config,
            SelectionCriterion::Cv,
            &FitSettings::default(),
        )?;
        frozen.cv = Some(FrozenPenalties {
            lambda: choice.lambda,
            gamma: choice.gamma,
        });
    }
    if needs_aic {
        let choice = select_with(
            &tuning,
            model,
            spec_template,
            cov_template,
            &cv_config,
            SelectionCriterion::Aic,
            &FitSettings::default(),
        )?;
        frozen.aic = Some(FrozenPenalties {
            lambda: choice.lambda,
            gamma: choice.gamma,
        });
    }
    Ok(frozen)
}

/// Runs every configured strategy over the evaluation span and accrues the
/// buy-and-hold benchmark alongside.
///
/// `equity` and `risk_free` are raw per-period returns of the two legs,
/// aligned row for row with `panel`; the panel's target column is the
/// series the models forecast. Each evaluation period `t` fits on rows
/// `[t - window, t)`, so nothing dated `t` or later can reach a weight or
/// forecast applied at `t`.
///
/// The benchmark buys the first configured strategy's first executed weight
/// and never trades again: its equity share moves only because the two legs
/// compound at different rates.
#[allow(clippy::too_many_arguments)]
pub fn run_market_timing(
    panel: &TimeSeriesPanel,
    equity: &[f64],
    risk_free: &[f64],
    model: &ModelSpec,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    config: &BacktestConfig,
    frozen: &FrozenChoices,
) -> Result<BacktestResult> {
    run_market_timing_with(
        panel,
        equity,
        risk_free,
        model,
        spec_template,
        cov_template,
        config,
        frozen,
        &FitSettings::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn run_market_timing_with(
    panel: &TimeSeriesPanel,
    equity: &[f64],
    risk_free: &[f64],
    model: &ModelSpec,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    config: &BacktestConfig,
    frozen: &FrozenChoices,
    settings: &FitSettings,
) -> Result<BacktestResult> {
    config.validate(panel, frozen)?;
    model.validate(panel)?;
    if equity.len() != panel.len() || risk_free.len() != panel.len() {
        return Err(Error::DimensionMismatch(format!(
            "return series of {} and {} rows against a panel of {}",
            equity.len(),
            risk_free.len(),
            panel.len()
        )));
    }
    let start = config.evaluation_start();
    let w = config.window;
    let target = target_index(model);

    let mut strategies = Vec::with_capacity(config.strategies.len());
    for &strategy in &config.strategies {
        let penalties = match strategy {
            Strategy::CvOptimal => frozen.cv,
            Strategy::AicOptimal => frozen.aic,
            Strategy::VarUnregularized => Some(FrozenPenalties {
                lambda: 0.0,
                gamma: 0.0,
            }),
            Strategy::MovingAverage => None,
        };
        let spec = spec_template
            .clone()
            .with_lambda(penalties.map_or(0.0, |p| p.lambda));
        let cov = cov_template
            .clone()
            .with_gamma(penalties.map_or(0.0, |p| p.gamma));

        let n_eval = panel.len() - start;
        let mut forecasts = Vec::with_capacity(n_eval);
        let mut weights = Vec::with_capacity(n_eval);
        let mut returns = Vec::with_capacity(n_eval);
        let mut wealth = Vec::with_capacity(n_eval + 1);
        wealth.push(1.0);
        let mut held = 0.0;
        let mut warm_b = None;
        let mut warm_sigma = None;
        for t in start..panel.len() {
            let window = panel.window(t - w, t)?;
            let target_col: Vec<f64> = window.values().column(target).iter().copied().collect();
            let forecast = if strategy == Strategy::MovingAverage {
                target_col.iter().sum::<f64>() / w as f64
            } else {
                let warm = WarmStart {
                    coefficients: warm_b.as_ref(),
                    sigma: warm_sigma.as_ref(),
                };
                let est = fit_map_warm(&window, model, &spec, &cov, settings, warm)?;
                let value = forecast_one_step(&est, &window.last_row())?[target];
                warm_b = Some(est.coefficients.stacked());
                warm_sigma = Some(est.sigma);
                value
            };
            let variance = sample_variance(&target_col);
            let desired =
                mean_variance_weight(forecast, variance, config.risk_aversion, config.weight_bounds)?;
            held = apply_turnover_cap(held, desired, config.max_turnover);
            let r = held * equity[t] + (1.0 - held) * risk_free[t];
            forecasts.push(forecast);
            weights.push(held);
            returns.push(r);
            wealth.push(wealth.last().unwrap() * (1.0 + r));
        }
        strategies.push(StrategyRun {
            strategy,
            penalties: if strategy == Strategy::MovingAverage {
                None
            } else {
                penalties
            },
            forecast_stats: summary_stats(&forecasts).ok(),
            return_stats: summary_stats(&returns).ok(),
            forecasts,
            weights,
            returns,
            wealth,
        });
    }

    let initial_weight = strategies[0].weights[0];
    let mut bench_weights = Vec::with_capacity(panel.len() - start);
    let mut bench_returns = Vec::with_capacity(panel.len() - start);
    let mut bench_wealth = vec![1.0];
    let mut held = initial_weight;
    for t in start..panel.len() {
        let r = held * equity[t] + (1.0 - held) * risk_free[t];
        bench_weights.push(held);
        bench_returns.push(r);
        bench_wealth.push(bench_wealth.last().unwrap() * (1.0 + r));
        // The equity share drifts as the legs compound apart; no trade ever
        // resets it.
        held = held * (1.0 + equity[t]) / (1.0 + r);
    }

    Ok(BacktestResult {
        evaluation_start: start,
        risk_aversion: config.risk_aversion,
        strategies,
        benchmark: BenchmarkRun {
            initial_weight,
            weights: bench_weights,
            return_stats: summary_stats(&bench_returns).ok(),
            returns: bench_returns,
            wealth: bench_wealth,
        },
    })
}
