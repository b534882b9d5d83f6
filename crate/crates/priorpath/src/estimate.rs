//! Joint MAP estimation by alternating minimization.
//!
//! The estimate minimizes a single objective in the coefficients and the
//! shock covariance together: the exact Gaussian negative log likelihood,
//! plus the coefficient penalty, plus the covariance penalty and any
//! inverse-Wishart prior terms. Each alternation solves the coefficient
//! problem exactly at the current covariance (a whitened penalized
//! regression) and then the covariance problem exactly at the new residual
//! scatter, so the objective never increases at either half-step. That
//! descent property is asserted in debug builds and verified by tests.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::coef::{solve_coefficients, whiten};
use crate::cov::{solve_sparse_cov_with, CovSettings};
use crate::error::{Error, Result};
use crate::panel::{demean_panel, TimeSeriesPanel};
use crate::penalty::{CovPenalty, PenaltyFamily, PenaltySpec};
use crate::system::{
    build_sur_design, build_var_design, neg_log_likelihood, residual_scatter, Coefficients,
    ModelSpec, ResidualScatter, StackedSystem,
};

/// Knobs for the outer alternation.
#[derive(Clone, Debug)]
pub struct FitSettings {
    /// Maximum alternations between the coefficient and covariance steps.
    pub max_outer: usize,
    /// Relative tolerance on the change of the joint objective between
    /// consecutive alternations.
    pub tol: f64,
    /// Settings forwarded to the covariance solver.
    pub cov: CovSettings,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            max_outer: 50,
            tol: 1e-6,
            cov: CovSettings::default(),
        }
    }
}

/// A fitted joint MAP estimate at one (lambda, gamma) point.
#[derive(Clone, Debug)]
pub struct MapEstimate {
    pub coefficients: Coefficients,
    pub sigma: DMatrix<f64>,
    /// Column means subtracted before fitting; zeros when nothing was
    /// subtracted (SUR, or a VAR with demeaning turned off).
    pub means: DVector<f64>,
    /// Joint objective at the estimate.
    pub objective: f64,
    /// Alternations performed.
    pub outer_iterations: usize,
    /// Objective value at the starting point and after every half-step.
    pub objective_trace: Vec<f64>,
    /// Coefficient penalty strength, in reported units.
    pub lambda: f64,
    /// Covariance penalty strength.
    pub gamma: f64,
    /// Exact Gaussian negative log likelihood at the estimate.
    pub neg_log_likelihood: f64,
    /// Lag-adjusted sample size behind the likelihood.
    pub n_obs: usize,
    /// Index of the forecast target: a panel column for a VAR, an equation
    /// for a SUR system.
    pub target: usize,
    /// Whether the relative objective change dropped below tolerance before
    /// the alternation cap.
    pub converged: bool,
}

impl MapEstimate {
    /// The VAR coefficient matrix, when this is a VAR fit.
    pub fn var_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.coefficients {
            Coefficients::Var { matrix, .. } => Some(matrix),
            Coefficients::Sur { .. } => None,
        }
    }

    pub fn n_variables(&self) -> usize {
        self.sigma.nrows()
    }
}

/// Starting values carried over from a neighboring fit, as used by
/// warm-started path sweeps. Either part may be omitted.
#[derive(Clone, Copy, Debug, Default)]
pub struct WarmStart<'a> {
    pub coefficients: Option<&'a DVector<f64>>,
    pub sigma: Option<&'a DMatrix<f64>>,
}

/// Fits the joint MAP estimate with default alternation settings.
pub fn fit_map(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    coef_penalty: &PenaltySpec,
    cov_penalty: &CovPenalty,
) -> Result<MapEstimate> {
    fit_map_with(panel, model, coef_penalty, cov_penalty, &FitSettings::default())
}

pub fn fit_map_with(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    coef_penalty: &PenaltySpec,
    cov_penalty: &CovPenalty,
    settings: &FitSettings,
) -> Result<MapEstimate> {
    fit_map_warm(
        panel,
        model,
        coef_penalty,
        cov_penalty,
        settings,
        WarmStart::default(),
    )
}

pub fn fit_map_warm(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    coef_penalty: &PenaltySpec,
    cov_penalty: &CovPenalty,
    settings: &FitSettings,
    warm: WarmStart<'_>,
) -> Result<MapEstimate> {
    model.validate(panel)?;
    let (working, means) = match model {
        ModelSpec::Var(spec) if spec.demean => demean_panel(panel)?,
        _ => (panel.clone(), DVector::zeros(panel.width())),
    };
    let system = match model {
        ModelSpec::Var(spec) => build_var_design(&working, spec)?,
        ModelSpec::Sur(spec) => build_sur_design(&working, spec)?,
    };
    let solver_spec = prepare_penalty(coef_penalty, &system)?;
    let m = system.n_equations();
    cov_penalty.validate(m)?;
    let mask = cov_penalty.mask_for(m);
    let nu_adj = match cov_penalty.prior_dof {
        Some(nu) => nu - m as f64 - 1.0,
        None => 0.0,
    };

    // Joint objective: exact negative log likelihood, coefficient penalty in
    // solver units, prior terms, and the scaled covariance penalty. Both
    // half-steps minimize this exact function in their own block.
    let q_of = |scatter: &ResidualScatter, sigma: &DMatrix<f64>, b: &DVector<f64>| -> Result<f64> {
        let nll = neg_log_likelihood(scatter, sigma)?;
        let mut q = nll + solver_penalty(&solver_spec, b);
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("sigma in the joint objective".into()))?;
        if nu_adj != 0.0 {
            let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            q += 0.5 * nu_adj * log_det;
        }
        if let Some(s0) = &cov_penalty.prior_scale {
            q += 0.5 * chol.solve(s0).trace();
        }
        if cov_penalty.gamma > 0.0 {
            let t_eff = scatter.n_obs as f64 + nu_adj;
            let mut l1 = 0.0;
            for i in 0..m {
                for j in 0..m {
                    l1 += mask[(i, j)] * sigma[(i, j)].abs();
                }
            }
            q += 0.5 * t_eff * cov_penalty.gamma * l1;
        }
        Ok(q)
    };

    // Start from zero coefficients and the scatter they imply, unless a
    // neighboring solution was handed in.
    let mut stacked = match warm.coefficients {
        Some(b) => {
            if b.len() != system.n_cols() {
                return Err(Error::DimensionMismatch(format!(
                    "warm coefficients have {} entries, system has {} columns",
                    b.len(),
                    system.n_cols()
                )));
            }
            b.clone()
        }
        None => DVector::zeros(system.n_cols()),
    };
    let mut coefs = system.coefficients_from_stacked(&stacked);
    let mut scatter = residual_scatter(&working, model, &coefs, None)?;
    let mut sigma = match warm.sigma {
        Some(s) => {
            if s.nrows() != m || s.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "warm sigma is {}x{}, system has {m} equations",
                    s.nrows(),
                    s.ncols()
                )));
            }
            Cholesky::new(s.clone())
                .ok_or_else(|| Error::NotPositiveDefinite("warm covariance start".into()))?;
            s.clone()
        }
        None => guarded_covariance(&scatter.matrix)?,
    };

    let mut q_prev = q_of(&scatter, &sigma, &stacked)?;
    let mut trace = vec![q_prev];
    let mut outer = 0;
    let mut converged = false;

    let mut warm_b: Option<DVector<f64>> = warm.coefficients.cloned();
    while outer < settings.max_outer {
        outer += 1;

        let whitened = whiten(&system, &sigma)?;
        let sol = solve_coefficients(&whitened, &solver_spec, warm_b.as_ref())?;
        coefs = system.coefficients_from_stacked(&sol.coefficients);
        stacked = sol.coefficients.clone();
        warm_b = Some(sol.coefficients);
        scatter = residual_scatter(&working, model, &coefs, None)?;
        let q_b = q_of(&scatter, &sigma, &stacked)?;
        debug_assert!(
            q_b <= trace.last().unwrap() + 1e-9 * (1.0 + trace.last().unwrap().abs()),
            "coefficient step increased the objective: {} -> {q_b}",
            trace.last().unwrap()
        );
        trace.push(q_b);

        let (s_eff, _) = cov_penalty.effective_scatter(&scatter)?;
        let cov_sol = solve_sparse_cov_with(&s_eff, cov_penalty, Some(&sigma), &settings.cov)?;
        sigma = cov_sol.sigma;
        let q_s = q_of(&scatter, &sigma, &stacked)?;
        debug_assert!(
            q_s <= q_b + 1e-9 * (1.0 + q_b.abs()),
            "covariance step increased the objective: {q_b} -> {q_s}"
        );
        trace.push(q_s);

        if (q_prev - q_s).abs() <= settings.tol * (1.0 + q_s.abs()) {
            q_prev = q_s;
            converged = true;
            break;
        }
        q_prev = q_s;
    }

    let nll = neg_log_likelihood(&scatter, &sigma)?;
    let target = match model {
        ModelSpec::Var(spec) => spec.target,
        ModelSpec::Sur(spec) => spec.target_equation,
    };
    Ok(MapEstimate {
        coefficients: coefs,
        sigma,
        means,
        objective: q_prev,
        outer_iterations: outer,
        objective_trace: trace,
        lambda: coef_penalty.lambda,
        gamma: cov_penalty.gamma,
        neg_log_likelihood: nll,
        n_obs: scatter.n_obs,
        target,
        converged,
    })
}

/// Merges the system's intercept columns into the exempt set, validates the
/// result, and rescales lambda into solver units.
fn prepare_penalty(spec: &PenaltySpec, system: &StackedSystem) -> Result<PenaltySpec> {
    let mut merged = spec.clone();
    for &c in system.intercept_cols() {
        if !merged.penalty_exempt.contains(&c) {
            merged.penalty_exempt.push(c);
        }
    }
    merged.validate(system.n_cols())?;
    Ok(merged.in_solver_units(system.n_rows()))
}

/// The coefficient penalty term as the low-level solvers account for it.
fn solver_penalty(spec: &PenaltySpec, b: &DVector<f64>) -> f64 {
    match spec.family {
        PenaltyFamily::Ridge => 0.5 * spec.lambda * spec.penalty_value(b),
        _ => spec.lambda * spec.penalty_value(b),
    }
}

/// The sample covariance, with a diagonal nudge when it is too close to
/// singular for the whitening step.
fn guarded_covariance(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = s.nrows();
    let scale = s.trace() / m as f64;
    if !(scale > 0.0) {
        return Err(Error::Degenerate(
            "initial residual scatter has nonpositive trace".into(),
        ));
    }
    let floor = 1e-8 * scale;
    if Cholesky::new(s.clone() - DMatrix::identity(m, m) * floor).is_some() {
        return Ok(s.clone());
    }
    let nudged = s + DMatrix::identity(m, m) * (1e-4 * scale);
    if Cholesky::new(nudged.clone() - DMatrix::identity(m, m) * floor).is_some() {
        return Ok(nudged);
    }
    Err(Error::NotPositiveDefinite(
        "initial residual scatter, even after a diagonal nudge".into(),
    ))
}
