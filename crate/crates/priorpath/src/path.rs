//! Regularization paths: grids over (lambda, gamma) and the sweep driver
//! that fits every point with warm starts along the sweep axis.
//!
//! Sweeps come in three shapes. A lambda sweep holds gamma fixed and walks
//! lambda from its data-driven maximum down to zero, so the first point is
//! the fully shrunk model and the last is the unpenalized one. A gamma sweep
//! does the opposite for the covariance penalty. The full grid runs one
//! lambda chain per gamma value; chains are independent and may run in
//! parallel, while the points inside a chain share warm starts and therefore
//! run in order.

use nalgebra::DVector;

use crate::analysis::{forecast_one_step, orthogonal_irf, shock_correlation_with_target};
use crate::error::{Error, Result};
use crate::estimate::{fit_map_warm, FitSettings, MapEstimate, WarmStart};
use crate::panel::{demean_panel, TimeSeriesPanel};
use crate::penalty::{CovPenalty, PenaltyFamily, PenaltySpec};
use crate::system::{build_sur_design, build_var_design, residual_scatter, Coefficients, ModelSpec};

/// Ratio between the largest and smallest positive grid value.
const GRID_FLOOR: f64 = 1e-4;

/// Practical shrinkage multiplier for ridge, which never produces exact
/// zeros at finite lambda.
const RIDGE_MAX_FACTOR: f64 = 1e4;

/// The tuning-parameter grid for a path or a cross-validation search.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyGrid {
    /// Descending coefficient penalties, conventionally ending in 0.
    pub lambda_values: Vec<f64>,
    /// Ascending covariance penalties, conventionally starting at 0.
    pub gamma_values: Vec<f64>,
}

impl PenaltyGrid {
    /// A single fixed point.
    pub fn single(lambda: f64, gamma: f64) -> Self {
        PenaltyGrid {
            lambda_values: vec![lambda],
            gamma_values: vec![gamma],
        }
    }

    /// Log-spaced grid: `n_lambda` points from `lambda_max` down to
    /// `1e-4 * lambda_max` plus an exact zero, and `n_gamma` points rising
    /// to `gamma_max` after a leading zero.
    pub fn log_spaced(lambda_max: f64, n_lambda: usize, gamma_max: f64, n_gamma: usize) -> Self {
        PenaltyGrid {
            lambda_values: descending_with_zero(lambda_max, n_lambda),
            gamma_values: ascending_from_zero(gamma_max, n_gamma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_values.is_empty() || self.gamma_values.is_empty() {
            return Err(Error::InvalidSpec("penalty grid must be nonempty".into()));
        }
        for &l in &self.lambda_values {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "grid lambda must be nonnegative and finite, got {l}"
                )));
            }
        }
        for &g in &self.gamma_values {
            if !g.is_finite() || g < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "grid gamma must be nonnegative and finite, got {g}"
                )));
            }
        }
        if self.lambda_values.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidSpec(
                "lambda grid must be strictly descending".into(),
            ));
        }
        if self.gamma_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec(
                "gamma grid must be strictly ascending".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lambda_values.len() * self.gamma_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_values.is_empty() || self.gamma_values.is_empty()
    }
}

fn descending_with_zero(max: f64, n: usize) -> Vec<f64> {
    if !(max > 0.0) || n == 0 {
        return vec![0.0];
    }
    let mut out = Vec::with_capacity(n + 1);
    if n == 1 {
        out.push(max);
    } else {
        for i in 0..n {
            out.push(max * GRID_FLOOR.powf(i as f64 / (n - 1) as f64));
        }
    }
    out.push(0.0);
    out
}

fn ascending_from_zero(max: f64, n: usize) -> Vec<f64> {
    if !(max > 0.0) || n == 0 {
        return vec![0.0];
    }
    let mut out = vec![0.0];
    if n == 1 {
        out.push(max);
    } else {
        for i in (0..n).rev() {
            out.push(max * GRID_FLOOR.powf(i as f64 / (n - 1) as f64));
        }
    }
    out
}

/// Which parameter a path varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathAxis {
    /// Lambda varies, gamma fixed; the grid must hold exactly one gamma.
    LambdaSweep,
    /// Gamma varies, lambda fixed; the grid must hold exactly one lambda.
    GammaSweep,
    /// Every (lambda, gamma) combination, one lambda chain per gamma.
    FullGrid,
}

/// Summary of one fitted grid point.
#[derive(Clone, Debug)]
pub struct PathPoint {
    pub lambda: f64,
    pub gamma: f64,
    /// Coefficients of the target equation.
    pub target_coefficients: DVector<f64>,
    /// One-step forecast of the target from the panel's last row; absent
    /// for fits that cannot be iterated forward (SUR, higher lag orders).
    pub forecast: Option<f64>,
    /// Shock correlations between the target and every other variable.
    pub shock_correlations: DVector<f64>,
    /// Target row of the horizon-1 orthogonalized impulse response; absent
    /// when the impulse response is unavailable.
    pub irf_entries: Option<DVector<f64>>,
    pub active_set_size: usize,
    pub objective: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Endpoint naming: the unpenalized lambda point is the plain model,
    /// the fully shrunk one forecasts the window average.
    pub label: Option<String>,
}

/// One grid point's result: a summary or the error that prevented it.
#[derive(Clone, Debug)]
pub enum PathOutcome {
    Estimated(PathPoint),
    Failed {
        lambda: f64,
        gamma: f64,
        message: String,
    },
}

impl PathOutcome {
    pub fn point(&self) -> Option<&PathPoint> {
        match self {
            PathOutcome::Estimated(p) => Some(p),
            PathOutcome::Failed { .. } => None,
        }
    }
}

/// A traced path: the grid in evaluation order and one outcome per point.
#[derive(Clone, Debug)]
pub struct RegularizationPath {
    pub axis: PathAxis,
    pub grid: Vec<(f64, f64)>,
    pub points: Vec<PathOutcome>,
}

impl RegularizationPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Successfully estimated points, in grid order.
    pub fn estimated(&self) -> impl Iterator<Item = &PathPoint> {
        self.points.iter().filter_map(PathOutcome::point)
    }

    pub fn failure_count(&self) -> usize {
        self.points.len() - self.estimated().count()
    }
}

/// Smallest lambda at which the coefficient step keeps every penalized
/// coefficient at zero, from the gradient of the whitened problem at B = 0.
/// Ridge never reaches exact zeros, so its value is a practical multiple of
/// the L1 threshold.
pub fn lambda_max(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
) -> Result<f64> {
    model.validate(panel)?;
    let working = match model {
        ModelSpec::Var(spec) if spec.demean => demean_panel(panel)?.0,
        _ => panel.clone(),
    };
    let system = match model {
        ModelSpec::Var(spec) => build_var_design(&working, spec)?,
        ModelSpec::Sur(spec) => build_sur_design(&working, spec)?,
    };
    let zero = system.coefficients_from_stacked(&DVector::zeros(system.n_cols()));
    let scatter = residual_scatter(&working, model, &zero, None)?;
    let (s_eff, _) = cov_template.effective_scatter(&scatter)?;
    let sigma = crate::cov::solve_sparse_cov(&s_eff, cov_template, None)?.sigma;
    let whitened = crate::coef::whiten(&system, &sigma)?;
    let (_, q, _) = whitened.normal_equations();

    let mut exempt = vec![false; system.n_cols()];
    for &e in &spec_template.penalty_exempt {
        if e < exempt.len() {
            exempt[e] = true;
        }
    }
    for &e in system.intercept_cols() {
        exempt[e] = true;
    }
    let n = system.n_rows() as f64;
    let linf = q
        .iter()
        .enumerate()
        .filter(|(j, _)| !exempt[*j])
        .map(|(_, v)| v.abs())
        .fold(0.0f64, f64::max);

    let max = match spec_template.family {
        PenaltyFamily::Lasso => linf / n,
        PenaltyFamily::ElasticNet if spec_template.mixing > 0.0 => {
            linf / n / spec_template.mixing
        }
        PenaltyFamily::Ridge | PenaltyFamily::ElasticNet => RIDGE_MAX_FACTOR * linf / n,
        PenaltyFamily::GroupLasso => {
            let groups = spec_template.groups.as_ref().ok_or_else(|| {
                Error::InvalidSpec("group penalty requires a group partition".into())
            })?;
            groups
                .iter()
                .map(|g| g.iter().map(|&j| q[j] * q[j]).sum::<f64>().sqrt())
                .fold(0.0f64, f64::max)
                / n
        }
    };
    if !(max > 0.0) {
        return Err(Error::Degenerate(
            "penalty gradient vanishes at zero coefficients; nothing to shrink".into(),
        ));
    }
    Ok(max)
}

/// Smallest gamma at which the covariance solution is exactly as sparse as
/// its mask allows: above it, every masked entry of the solution is zero.
pub fn gamma_max(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    cov_template: &CovPenalty,
) -> Result<f64> {
    model.validate(panel)?;
    let working = match model {
        ModelSpec::Var(spec) if spec.demean => demean_panel(panel)?.0,
        _ => panel.clone(),
    };
    let system = match model {
        ModelSpec::Var(spec) => build_var_design(&working, spec)?,
        ModelSpec::Sur(spec) => build_sur_design(&working, spec)?,
    };
    let zero = system.coefficients_from_stacked(&DVector::zeros(system.n_cols()));
    let scatter = residual_scatter(&working, model, &zero, None)?;
    let (s, _) = cov_template.effective_scatter(&scatter)?;
    let m = s.nrows();
    let mask = cov_template.mask_for(m);

    // With every masked entry pinned at zero the candidate solution keeps
    // the unmasked block of S; for the default mask that is diag(S). The
    // subgradient bound there is |s_ij| / (s_ii s_jj) per masked entry.
    let mut max = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if mask[(i, j)] != 0.0 {
                max = max.max(s[(i, j)].abs() / (s[(i, i)] * s[(j, j)]));
            }
        }
    }
    Ok(max)
}

/// Builds the default 50 x 20 log-spaced grid from the data.
pub fn default_grid(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
) -> Result<PenaltyGrid> {
    let lmax = lambda_max(panel, model, spec_template, cov_template)?;
    let gmax = gamma_max(panel, model, cov_template)?;
    Ok(PenaltyGrid::log_spaced(lmax, 50, gmax, 20))
}

/// Fits every point of the grid and summarizes each estimate.
pub fn trace_path(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    grid: &PenaltyGrid,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    axis: PathAxis,
) -> Result<RegularizationPath> {
    trace_path_with(
        panel,
        model,
        grid,
        spec_template,
        cov_template,
        axis,
        &FitSettings::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn trace_path_with(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    grid: &PenaltyGrid,
    spec_template: &PenaltySpec,
    cov_template: &CovPenalty,
    axis: PathAxis,
    settings: &FitSettings,
) -> Result<RegularizationPath> {
    grid.validate()?;
    model.validate(panel)?;
    match axis {
        PathAxis::LambdaSweep if grid.gamma_values.len() != 1 => {
            return Err(Error::InvalidSpec(format!(
                "a lambda sweep fixes gamma; the grid holds {} gamma values",
                grid.gamma_values.len()
            )));
        }
        PathAxis::GammaSweep if grid.lambda_values.len() != 1 => {
            return Err(Error::InvalidSpec(format!(
                "a gamma sweep fixes lambda; the grid holds {} lambda values",
                grid.lambda_values.len()
            )));
        }
        _ => {}
    }

    // A chain is a warm-started sequence of points sharing one fixed value
    // of the other parameter.
    let chains: Vec<Vec<(f64, f64)>> = match axis {
        PathAxis::GammaSweep => {
            let l = grid.lambda_values[0];
            vec![grid.gamma_values.iter().map(|&g| (l, g)).collect()]
        }
        _ => grid
            .gamma_values
            .iter()
            .map(|&g| grid.lambda_values.iter().map(|&l| (l, g)).collect())
            .collect(),
    };

    let lambda_top = grid.lambda_values[0];
    let run_chain = |chain: &Vec<(f64, f64)>| -> Vec<PathOutcome> {
        let mut outcomes = Vec::with_capacity(chain.len());
        let mut warm_b: Option<DVector<f64>> = None;
        let mut warm_sigma = None;
        for &(lambda, gamma) in chain {
            let spec = spec_template.clone().with_lambda(lambda);
            let cov = cov_template.clone().with_gamma(gamma);
            let warm = WarmStart {
                coefficients: warm_b.as_ref(),
                sigma: warm_sigma.as_ref(),
            };
            match fit_map_warm(panel, model, &spec, &cov, settings, warm) {
                Ok(est) => {
                    let label = if lambda == 0.0 && grid.lambda_values.len() > 1 {
                        Some("VAR".to_string())
                    } else if lambda == lambda_top && grid.lambda_values.len() > 1 {
                        Some("Average".to_string())
                    } else {
                        None
                    };
                    let point = summarize(&est, panel, label);
                    warm_b = Some(est.coefficients.stacked());
                    warm_sigma = Some(est.sigma);
                    outcomes.push(PathOutcome::Estimated(point));
                }
                Err(err) => outcomes.push(PathOutcome::Failed {
                    lambda,
                    gamma,
                    message: err.to_string(),
                }),
            }
        }
        outcomes
    };

    #[cfg(feature = "parallel")]
    let per_chain: Vec<Vec<PathOutcome>> = {
        use rayon::prelude::*;
        chains.par_iter().map(run_chain).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_chain: Vec<Vec<PathOutcome>> = chains.iter().map(run_chain).collect();

    let mut points = Vec::with_capacity(grid.len());
    let mut flat_grid = Vec::with_capacity(grid.len());
    for (chain, outcomes) in chains.iter().zip(per_chain) {
        flat_grid.extend_from_slice(chain);
        points.extend(outcomes);
    }
    Ok(RegularizationPath {
        axis,
        grid: flat_grid,
        points,
    })
}

fn summarize(est: &MapEstimate, panel: &TimeSeriesPanel, label: Option<String>) -> PathPoint {
    let target_coefficients = match &est.coefficients {
        Coefficients::Var { matrix, .. } => matrix.row(est.target).transpose(),
        Coefficients::Sur { per_equation } => per_equation[est.target].clone(),
    };
    let forecast = forecast_one_step(est, &panel.last_row())
        .ok()
        .map(|f| f[est.target]);
    let shock_correlations = shock_correlation_with_target(est, est.target)
        .unwrap_or_else(|_| DVector::zeros(est.n_variables().saturating_sub(1)));
    let irf_entries = orthogonal_irf(est, 1)
        .ok()
        .map(|irf| irf.matrix.row(est.target).transpose());
    PathPoint {
        lambda: est.lambda,
        gamma: est.gamma,
        target_coefficients,
        forecast,
        shock_correlations,
        irf_entries,
        active_set_size: est.coefficients.count_nonzero(),
        objective: est.objective,
        outer_iterations: est.outer_iterations,
        converged: est.converged,
        label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cov::CovSettings;
    use crate::estimate::fit_map;
    use crate::synthetic::simulate_var1;
    use crate::system::VarSpec;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn sparse_panel(t: usize, seed: u64) -> TimeSeriesPanel {
        // Three variables, one of which drives the others.
        let b = DMatrix::from_row_slice(
            3,
            3,
            &[0.5, 0.3, 0.0, 0.0, 0.6, 0.0, 0.0, 0.4, 0.2],
        );
        let mut sigma = DMatrix::identity(3, 3) * 0.5;
        sigma[(0, 1)] = 0.1;
        sigma[(1, 0)] = 0.1;
        simulate_var1(&b, &sigma, &DVector::from_vec(vec![0.5, -0.5, 1.0]), t, seed).unwrap()
    }

    #[test]
    fn grid_construction_orders_and_includes_endpoints() {
        let grid = PenaltyGrid::log_spaced(2.0, 5, 0.8, 4);
        assert_eq!(grid.lambda_values.len(), 6);
        assert_eq!(grid.lambda_values[0], 2.0);
        assert_eq!(*grid.lambda_values.last().unwrap(), 0.0);
        assert_abs_diff_eq!(grid.lambda_values[4], 2.0 * 1e-4, epsilon = 1e-12);
        assert_eq!(grid.gamma_values.len(), 5);
        assert_eq!(grid.gamma_values[0], 0.0);
        assert_eq!(*grid.gamma_values.last().unwrap(), 0.8);
        grid.validate().unwrap();
    }

    #[test]
    fn degenerate_grid_maxima_collapse_to_zero_only() {
        let grid = PenaltyGrid::log_spaced(0.0, 5, 0.0, 4);
        assert_eq!(grid.lambda_values, vec![0.0]);
        assert_eq!(grid.gamma_values, vec![0.0]);
        grid.validate().unwrap();
    }

    #[test]
    fn unsorted_grids_are_rejected() {
        let grid = PenaltyGrid {
            lambda_values: vec![0.1, 0.5],
            gamma_values: vec![0.0],
        };
        assert!(grid.validate().is_err());
        let grid = PenaltyGrid {
            lambda_values: vec![0.5],
            gamma_values: vec![0.4, 0.1],
        };
        assert!(grid.validate().is_err());
    }

    #[test]
    fn single_point_path_is_the_plain_fit() {
        let panel = sparse_panel(120, 1);
        let model = ModelSpec::Var(VarSpec::default());
        let spec = PenaltySpec::lasso(0.0);
        let cov = CovPenalty::new(0.0);
        let path = trace_path(
            &panel,
            &model,
            &PenaltyGrid::single(0.0, 0.0),
            &spec,
            &cov,
            PathAxis::FullGrid,
        )
        .unwrap();
        assert_eq!(path.len(), 1);
        let point = path.points[0].point().unwrap();
        let direct = fit_map(&panel, &model, &spec, &cov).unwrap();
        assert_eq!(
            point.target_coefficients,
            direct.var_matrix().unwrap().row(0).transpose()
        );
        assert_eq!(point.objective, direct.objective);
        assert_eq!(point.label, None);
    }

    #[test]
    fn lambda_max_zeroes_every_coefficient() {
        let panel = sparse_panel(150, 2);
        let model = ModelSpec::Var(VarSpec::default());
        let spec = PenaltySpec::lasso(0.0);
        let cov = CovPenalty::new(0.0);
        let lmax = lambda_max(&panel, &model, &spec, &cov).unwrap();

        let at_max = fit_map(&panel, &model, &spec.clone().with_lambda(lmax), &cov).unwrap();
        assert_eq!(at_max.coefficients.count_nonzero(), 0);

        let below = fit_map(
            &panel,
            &model,
            &spec.clone().with_lambda(0.5 * lmax),
            &cov,
        )
        .unwrap();
        assert!(below.coefficients.count_nonzero() > 0);
    }

    #[test]
    fn gamma_max_diagonalizes_the_covariance() {
        let panel = sparse_panel(150, 3);
        let model = ModelSpec::Var(VarSpec::default());
        let cov = CovPenalty::new(0.0);
        let gmax = gamma_max(&panel, &model, &cov).unwrap();
        assert!(gmax > 0.0);

        // At the bound itself the solution is diagonal up to solver
        // tolerance; strictly above it the off-diagonals are exact zeros.
        let at_bound = fit_map(
            &panel,
            &model,
            &PenaltySpec::lasso(1e9),
            &cov.clone().with_gamma(gmax),
        )
        .unwrap();
        let above = fit_map(
            &panel,
            &model,
            &PenaltySpec::lasso(1e9),
            &cov.clone().with_gamma(1.5 * gmax),
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_abs_diff_eq!(at_bound.sigma[(i, j)], 0.0, epsilon = 1e-6);
                    assert_eq!(above.sigma[(i, j)], 0.0, "entry ({i},{j}) not zeroed");
                }
            }
        }

        let half = fit_map(
            &panel,
            &model,
            &PenaltySpec::lasso(1e9),
            &cov.with_gamma(0.4 * gmax),
        )
        .unwrap();
        let off: f64 = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| half.sigma[(i, j)].abs())
            .sum();
        assert!(off > 0.0, "moderate gamma should keep some covariance");
    }

    #[test]
    fn lambda_sweep_ends_at_the_unpenalized_forecast() {
        let panel = sparse_panel(140, 4);
        let model = ModelSpec::Var(VarSpec::default());
        let spec = PenaltySpec::lasso(0.0);
        let cov = CovPenalty::new(0.0);
        let lmax = lambda_max(&panel, &model, &spec, &cov).unwrap();
        let grid = PenaltyGrid::log_spaced(lmax, 8, 0.0, 0);
        let path = trace_path(&panel, &model, &grid, &spec, &cov, PathAxis::LambdaSweep).unwrap();
        assert_eq!(path.failure_count(), 0);

        // Endpoint identities: the first point is fully shrunk and forecasts
        // the sample mean; the last is the unpenalized fit.
        let first = path.points[0].point().unwrap();
        assert_eq!(first.active_set_size, 0);
        assert_eq!(first.forecast.unwrap(), panel.means()[0]);
        assert_eq!(first.label.as_deref(), Some("Average"));

        let last = path.points.last().unwrap().point().unwrap();
        assert_eq!(last.label.as_deref(), Some("VAR"));
        let direct = fit_map(&panel, &model, &spec, &cov).unwrap();
        let direct_forecast =
            crate::analysis::forecast_one_step(&direct, &panel.last_row()).unwrap()[0];
        assert_abs_diff_eq!(last.forecast.unwrap(), direct_forecast, epsilon = 1e-6);
    }

    #[test]
    fn active_set_grows_as_lambda_falls() {
        let panel = sparse_panel(200, 5);
        let model = ModelSpec::Var(VarSpec::default());
        let spec = PenaltySpec::lasso(0.0);
        let cov = CovPenalty::new(0.0);
        let lmax = lambda_max(&panel, &model, &spec, &cov).unwrap();
        let grid = PenaltyGrid::log_spaced(lmax, 12, 0.0, 0);
        let path = trace_path(&panel, &model, &grid, &spec, &cov, PathAxis::LambdaSweep).unwrap();
        let sizes: Vec<usize> = path.estimated().map(|p| p.active_set_size).collect();
        assert_eq!(sizes.len(), grid.lambda_values.len());
        for w in sizes.windows(2) {
            assert!(
                w[1] >= w[0],
                "active set shrank while lambda fell: {sizes:?}"
            );
        }
        assert_eq!(sizes[0], 0);
        assert!(*sizes.last().unwrap() > 0);
    }

    #[test]
    fn shock_correlations_vanish_along_the_gamma_sweep() {
        let panel = sparse_panel(160, 6);
        let model = ModelSpec::Var(VarSpec::default());
        let cov = CovPenalty::new(0.0);
        let gmax = gamma_max(&panel, &model, &cov).unwrap();
        let grid = PenaltyGrid {
            lambda_values: vec![0.01],
            gamma_values: ascending_from_zero(gmax, 6),
        };
        let path = trace_path(
            &panel,
            &model,
            &grid,
            &PenaltySpec::lasso(0.0),
            &cov,
            PathAxis::GammaSweep,
        )
        .unwrap();
        assert_eq!(path.failure_count(), 0);
        let total_abs: Vec<f64> = path
            .estimated()
            .map(|p| p.shock_correlations.iter().map(|v| v.abs()).sum())
            .collect();
        assert!(total_abs[0] > 0.0);
        assert_eq!(*total_abs.last().unwrap(), 0.0);
        assert!(total_abs.last().unwrap() < &total_abs[0]);
    }

    #[test]
    fn sweep_axis_constraints_are_enforced() {
        let panel = sparse_panel(100, 7);
        let model = ModelSpec::Var(VarSpec::default());
        let grid = PenaltyGrid::log_spaced(1.0, 3, 1.0, 3);
        let err = trace_path(
            &panel,
            &model,
            &grid,
            &PenaltySpec::lasso(0.0),
            &CovPenalty::new(0.0),
            PathAxis::LambdaSweep,
        );
        assert!(err.is_err());
    }

    #[test]
    fn per_point_failures_do_not_abort_the_sweep() {
        let panel = sparse_panel(100, 8);
        let model = ModelSpec::Var(VarSpec::default());
        // Forbid the covariance solver from iterating; only gamma = 0, which
        // short-circuits to the scatter, can succeed.
        let settings = FitSettings {
            cov: CovSettings {
                max_outer: 0,
                ..CovSettings::default()
            },
            ..FitSettings::default()
        };
        let grid = PenaltyGrid {
            lambda_values: vec![0.01],
            gamma_values: vec![0.0, 0.5],
        };
        let path = trace_path_with(
            &panel,
            &model,
            &grid,
            &PenaltySpec::lasso(0.0),
            &CovPenalty::new(0.0),
            PathAxis::GammaSweep,
            &settings,
        )
        .unwrap();
        assert_eq!(path.len(), 2);
        assert!(path.points[0].point().is_some());
        match &path.points[1] {
            PathOutcome::Failed { gamma, message, .. } => {
                assert_eq!(*gamma, 0.5);
                assert!(!message.is_empty());
            }
            PathOutcome::Estimated(_) => panic!("expected the gamma = 0.5 point to fail"),
        }
    }

    #[test]
    fn full_grid_orders_points_gamma_major() {
        let panel = sparse_panel(120, 9);
        let model = ModelSpec::Var(VarSpec::default());
        let grid = PenaltyGrid {
            lambda_values: vec![0.02, 0.0],
            gamma_values: vec![0.0, 0.1],
        };
        let path = trace_path(
            &panel,
            &model,
            &grid,
            &PenaltySpec::lasso(0.0),
            &CovPenalty::new(0.0),
            PathAxis::FullGrid,
        )
        .unwrap();
        assert_eq!(
            path.grid,
            vec![(0.02, 0.0), (0.0, 0.0), (0.02, 0.1), (0.0, 0.1)]
        );
        assert_eq!(path.len(), 4);
        assert_eq!(path.failure_count(), 0);
    }

    #[test]
    fn identical_calls_produce_identical_paths() {
        let panel = sparse_panel(110, 10);
        let model = ModelSpec::Var(VarSpec::default());
        let spec = PenaltySpec::lasso(0.0);
        let cov = CovPenalty::new(0.0);
        let lmax = lambda_max(&panel, &model, &spec, &cov).unwrap();
        let grid = PenaltyGrid::log_spaced(lmax, 5, 0.05, 2);
        let a = trace_path(&panel, &model, &grid, &spec, &cov, PathAxis::FullGrid).unwrap();
        let b = trace_path(&panel, &model, &grid, &spec, &cov, PathAxis::FullGrid).unwrap();
        assert_eq!(a.grid, b.grid);
        for (x, y) in a.points.iter().zip(&b.points) {
            match (x, y) {
                (PathOutcome::Estimated(p), PathOutcome::Estimated(q)) => {
                    assert_eq!(p.target_coefficients, q.target_coefficients);
                    assert_eq!(p.objective, q.objective);
                    assert_eq!(p.forecast, q.forecast);
                }
                _ => panic!("mismatched outcomes"),
            }
        }
    }

    #[test]
    fn adjacent_points_change_smoothly() {
        let panel = sparse_panel(180, 11);
        let model = ModelSpec::Var(VarSpec::default());
        let spec = PenaltySpec::lasso(0.0);
        let cov = CovPenalty::new(0.0);
        let lmax = lambda_max(&panel, &model, &spec, &cov).unwrap();
        let grid = PenaltyGrid::log_spaced(lmax, 20, 0.0, 0);
        let path = trace_path(&panel, &model, &grid, &spec, &cov, PathAxis::LambdaSweep).unwrap();
        let coefs: Vec<&DVector<f64>> = path.estimated().map(|p| &p.target_coefficients).collect();
        for w in coefs.windows(2) {
            let jump = (w[1] - w[0]).amax();
            assert!(jump < 0.5, "coefficients jumped by {jump} between grid points");
        }
    }
}
