//! Quantities derived from a fitted estimate: forecasts, orthogonalized
//! impulse responses, and shock-correlation summaries.
//!
//! Everything here is a pure function of an immutable [`MapEstimate`].
//! Forecast and impulse-response helpers support first-order VAR fits; the
//! design builders accept higher lag orders, but iterating those forward
//! would need a companion-form embedding that nothing downstream asks for.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::cov::correlation_from_cov;
use crate::error::{Error, Result};
use crate::estimate::MapEstimate;
use crate::system::Coefficients;

/// The conditioning information a forecast was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBasis {
    pub last_obs: DVector<f64>,
    pub means: DVector<f64>,
}

/// A point forecast at a fixed horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub horizon: usize,
    pub values: DVector<f64>,
    pub basis: ForecastBasis,
}

/// Responses of every variable (rows) to orthogonalized unit shocks
/// (columns), labeled by original column indices. The factorization is
/// triangular in `ordering`: shocks are orthogonalized by a Cholesky factor
/// computed after permuting the variables into that order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseResponse {
    pub horizon: usize,
    pub matrix: DMatrix<f64>,
    pub ordering: Vec<usize>,
}

fn var1_matrix(est: &MapEstimate) -> Result<&DMatrix<f64>> {
    match &est.coefficients {
        Coefficients::Var { matrix, lag: 1 } => Ok(matrix),
        Coefficients::Var { .. } => Err(Error::InvalidSpec(
            "forecast and impulse-response helpers support lag order 1".into(),
        )),
        Coefficients::Sur { .. } => Err(Error::InvalidSpec(
            "forecast and impulse-response helpers require a VAR fit".into(),
        )),
    }
}

fn check_obs(est: &MapEstimate, last_obs: &DVector<f64>) -> Result<()> {
    let p = est.n_variables();
    if last_obs.len() != p || est.means.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "conditioning observation has {} entries for a {p}-variable model",
            last_obs.len()
        )));
    }
    Ok(())
}

/// One-step-ahead forecast `means + B (last_obs - means)`.
pub fn forecast_one_step(est: &MapEstimate, last_obs: &DVector<f64>) -> Result<DVector<f64>> {
    let b = var1_matrix(est)?;
    check_obs(est, last_obs)?;
    Ok(&est.means + b * (last_obs - &est.means))
}

/// Iterated forecast `means + B^h (last_obs - means)`.
pub fn forecast_h_step(
    est: &MapEstimate,
    last_obs: &DVector<f64>,
    horizon: usize,
) -> Result<DVector<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidSpec("forecast horizon must be at least 1".into()));
    }
    let b = var1_matrix(est)?;
    check_obs(est, last_obs)?;
    let bh = matrix_power(b, horizon);
    Ok(&est.means + bh * (last_obs - &est.means))
}

/// [`forecast_h_step`] packaged with its conditioning information.
pub fn forecast(est: &MapEstimate, last_obs: &DVector<f64>, horizon: usize) -> Result<Forecast> {
    let values = forecast_h_step(est, last_obs, horizon)?;
    Ok(Forecast {
        horizon,
        values,
        basis: ForecastBasis {
            last_obs: last_obs.clone(),
            means: est.means.clone(),
        },
    })
}

/// Orthogonalized impulse responses at one horizon, ordering the fit's
/// target variable first in the factorization.
pub fn orthogonal_irf(est: &MapEstimate, horizon: usize) -> Result<ImpulseResponse> {
    let p = est.n_variables();
    if est.target >= p {
        return Err(Error::InvalidSpec(format!(
            "target index {} out of range for {p} variables",
            est.target
        )));
    }
    let mut ordering = Vec::with_capacity(p);
    ordering.push(est.target);
    ordering.extend((0..p).filter(|&v| v != est.target));
    orthogonal_irf_with(est, horizon, &ordering)
}

/// Orthogonalized impulse responses under an explicit variable ordering.
pub fn orthogonal_irf_with(
    est: &MapEstimate,
    horizon: usize,
    ordering: &[usize],
) -> Result<ImpulseResponse> {
    let b = var1_matrix(est)?;
    let p = est.n_variables();
    {
        let mut seen = vec![false; p];
        if ordering.len() != p {
            return Err(Error::InvalidSpec(format!(
                "ordering lists {} variables, model has {p}",
                ordering.len()
            )));
        }
        for &v in ordering {
            if v >= p || seen[v] {
                return Err(Error::InvalidSpec(
                    "ordering must be a permutation of the variable indices".into(),
                ));
            }
            seen[v] = true;
        }
    }

    // Work in the permuted basis, then report entries under the original
    // column labels.
    let b_perm = DMatrix::from_fn(p, p, |i, j| b[(ordering[i], ordering[j])]);
    let sigma_perm = DMatrix::from_fn(p, p, |i, j| est.sigma[(ordering[i], ordering[j])]);
    let chol = Cholesky::new(sigma_perm)
        .ok_or_else(|| Error::NotPositiveDefinite("sigma in impulse response".into()))?;
    let response_perm = matrix_power(&b_perm, horizon) * chol.l();
    let mut matrix = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            matrix[(ordering[i], ordering[j])] = response_perm[(i, j)];
        }
    }
    Ok(ImpulseResponse {
        horizon,
        matrix,
        ordering: ordering.to_vec(),
    })
}

/// Correlations of the target's shock with every other variable's shock, in
/// ascending variable order with the self-entry removed.
pub fn shock_correlation_with_target(
    est: &MapEstimate,
    target_index: usize,
) -> Result<DVector<f64>> {
    let p = est.n_variables();
    if target_index >= p {
        return Err(Error::InvalidSpec(format!(
            "target index {target_index} out of range for {p} variables"
        )));
    }
    let rho = correlation_from_cov(&est.sigma)?;
    let mut out = DVector::zeros(p.saturating_sub(1));
    let mut at = 0;
    for v in 0..p {
        if v != target_index {
            out[at] = rho[(target_index, v)];
            at += 1;
        }
    }
    Ok(out)
}

fn matrix_power(b: &DMatrix<f64>, mut h: usize) -> DMatrix<f64> {
    let p = b.nrows();
    let mut result = DMatrix::identity(p, p);
    let mut base = b.clone();
    loop {
        if h & 1 == 1 {
            result = &result * &base;
        }
        h >>= 1;
        if h == 0 {
            return result;
        }
        base = &base * &base;
    }
}
