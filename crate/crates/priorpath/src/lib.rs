//! Penalized predictive regression systems.
//!
//! This crate estimates vector autoregressions and seemingly unrelated
//! regression systems under joint regularization: shrinkage penalties on the
//! coefficients (ridge, lasso, elastic net, group lasso) and a sparsity
//! penalty on the residual covariance, fit together by alternating
//! minimization of one penalized likelihood. On top of the estimator sit
//! regularization-path tracing, rolling-origin cross-validation, information
//! criteria, impulse-response and forecasting helpers, and a market-timing
//! backtest harness.
//!
//! The pieces are layered: [`panel`] holds aligned time series, [`system`]
//! stacks them into regression designs, [`coef`] and [`cov`] solve the two
//! half-problems, and the estimator and diagnostics above combine them.

pub mod analysis;
pub mod backtest;
pub mod coef;
pub mod cov;
pub mod data;
pub mod error;
pub mod estimate;
pub mod panel;
pub mod path;
pub mod penalty;
pub mod select;
pub mod synthetic;
pub mod system;

pub use analysis::{
    forecast, forecast_h_step, forecast_one_step, orthogonal_irf, orthogonal_irf_with,
    shock_correlation_with_target, Forecast, ForecastBasis, ImpulseResponse,
};
pub use backtest::{
    apply_turnover_cap, freeze_penalties, mean_variance_weight, run_market_timing,
    run_market_timing_with, summary_stats, BacktestConfig, BacktestResult, BenchmarkRun,
    FrozenChoices, FrozenPenalties, Strategy, StrategyRun, SummaryStats,
};
pub use coef::{kkt_violation, solve_elastic_net, solve_group_lasso, solve_ridge, whiten, CoefSolution};
pub use cov::{
    correlation_from_cov, cov_objective, majorize_step, solve_sparse_cov, CovSettings, CovSolution,
};
pub use data::{
    compute_principal_components, compute_principal_components_with, load_panel,
    load_panel_from_reader, DatasetManifest, PrincipalComponents, Transform, TransformStep,
};
pub use error::{Error, ErrorKind, Result};
pub use estimate::{fit_map, fit_map_warm, fit_map_with, FitSettings, MapEstimate, WarmStart};
pub use panel::{demean_panel, Frequency, Period, TimeSeriesPanel};
pub use path::{
    default_grid, gamma_max, lambda_max, trace_path, trace_path_with, PathAxis, PathOutcome,
    PathPoint, PenaltyGrid, RegularizationPath,
};
pub use penalty::{prior_to_penalty, CovPenalty, PenaltyFamily, PenaltySpec, Prior};
pub use select::{
    information_criterion, information_criterion_with_sigma, rolling_cv, rolling_cv_with, select,
    select_with, CvConfig, CvEntry, CvResult, IcKind, ScoreEntry, SelectionCriterion,
    SelectionResult,
};
pub use synthetic::simulate_var1;
pub use system::{
    build_sur_design, build_var_design, neg_log_likelihood, residual_scatter, Coefficients,
    ModelSpec, ResidualScatter, StackedSystem, SurEquation, SurSpec, VarSpec,
};
