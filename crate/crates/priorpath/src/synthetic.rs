//! Seeded VAR(1) simulation for tests, benchmarks, and demos.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::panel::{Frequency, Period, TimeSeriesPanel};

/// Observations discarded before sampling starts, enough to wash out the
/// initial condition for any comfortably stationary system.
const BURN_IN: usize = 200;

/// Simulates `n_obs` rows of a stationary VAR(1)
/// `z_t = means + B (z_{t-1} - means) + L eps_t` with `Sigma = L L'` and
/// standard normal shocks drawn from a ChaCha8 stream, so identical seeds
/// reproduce identical panels on every platform.
pub fn simulate_var1(
    coefficients: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    means: &DVector<f64>,
    n_obs: usize,
    seed: u64,
) -> Result<TimeSeriesPanel> {
    let p = coefficients.nrows();
    if coefficients.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "coefficient matrix is {}x{}, expected square",
            coefficients.nrows(),
            coefficients.ncols()
        )));
    }
    if sigma.nrows() != p || sigma.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "sigma is {}x{} for a {p}-variable system",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if means.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "means vector has {} entries for a {p}-variable system",
            means.len()
        )));
    }
    if n_obs < 2 {
        return Err(Error::InvalidSpec(
            "a simulated panel needs at least 2 observations".into(),
        ));
    }
    let radius = coefficients
        .complex_eigenvalues()
        .iter()
        .map(|ev| ev.norm())
        .fold(0.0f64, f64::max);
    if radius >= 1.0 {
        return Err(Error::InvalidSpec(format!(
            "coefficient matrix has spectral radius {radius:.4}; the system is not stationary"
        )));
    }
    let chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("shock covariance".into()))?;
    let l = chol.l();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = DVector::zeros(p);
    let mut shock = DVector::zeros(p);
    let mut values = DMatrix::zeros(n_obs, p);
    for t in 0..BURN_IN + n_obs {
        for i in 0..p {
            shock[i] = rand::Rng::sample::<f64, _>(&mut rng, StandardNormal);
        }
        state = coefficients * &state + &l * &shock;
        if t >= BURN_IN {
            for i in 0..p {
                values[(t - BURN_IN, i)] = state[i] + means[i];
            }
        }
    }

    let names = (0..p).map(|i| format!("y{i}")).collect();
    let start = Period::new(1950, 1, Frequency::Quarterly)?;
    TimeSeriesPanel::with_start(start, names, values)
}
