//! Penalty specifications for the coefficient and covariance steps, and the
//! translation from prior hyperparameters to penalty strengths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::ResidualScatter;

/// Coefficient penalty families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyFamily {
    Ridge,
    Lasso,
    ElasticNet,
    GroupLasso,
}

impl PenaltyFamily {
    /// True for families whose solutions can contain exact zeros.
    pub fn is_sparse(self) -> bool {
        !matches!(self, PenaltyFamily::Ridge)
    }
}

/// Penalty on the stacked coefficient vector.
///
/// The low-level solvers in [`crate::coef`] use the classic objective
/// scalings pinned by their closed forms: ridge solves
/// `(X'X + lambda I) b = X'y`, the elastic net and group solvers minimize
/// `(1/2)||r||^2 + lambda * penalty`. Reported lambda values elsewhere in
/// the crate divide the squared error by the stacked row count so grids stay
/// comparable across window sizes; [`PenaltySpec::in_solver_units`] performs
/// that conversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda: f64,
    /// Elastic-net weight on the L1 term; 1.0 is a pure lasso.
    pub mixing: f64,
    /// Partition of the penalized coefficient indices, group family only.
    pub groups: Option<Vec<Vec<usize>>>,
    /// Indices never penalized, such as SUR intercepts.
    pub penalty_exempt: Vec<usize>,
}

impl PenaltySpec {
    pub fn ridge(lambda: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::Ridge,
            lambda,
            mixing: 0.0,
            groups: None,
            penalty_exempt: Vec::new(),
        }
    }

    pub fn lasso(lambda: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::Lasso,
            lambda,
            mixing: 1.0,
            groups: None,
            penalty_exempt: Vec::new(),
        }
    }

    pub fn elastic_net(lambda: f64, mixing: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::ElasticNet,
            lambda,
            mixing,
            groups: None,
            penalty_exempt: Vec::new(),
        }
    }

    pub fn group_lasso(lambda: f64, groups: Vec<Vec<usize>>) -> Self {
        PenaltySpec {
            family: PenaltyFamily::GroupLasso,
            lambda,
            mixing: 1.0,
            groups: Some(groups),
            penalty_exempt: Vec::new(),
        }
    }

    pub fn with_exempt(mut self, exempt: Vec<usize>) -> Self {
        self.penalty_exempt = exempt;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// The effective L1 weight seen by the coordinate solver.
    pub(crate) fn l1_weight(&self) -> f64 {
        match self.family {
            PenaltyFamily::Lasso | PenaltyFamily::GroupLasso => 1.0,
            PenaltyFamily::ElasticNet => self.mixing,
            PenaltyFamily::Ridge => 0.0,
        }
    }

    pub fn validate(&self, n_cols: usize) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "lambda must be a nonnegative finite number, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return Err(Error::InvalidSpec(format!(
                "elastic-net mixing must lie in [0, 1], got {}",
                self.mixing
            )));
        }
        for &e in &self.penalty_exempt {
            if e >= n_cols {
                return Err(Error::InvalidSpec(format!(
                    "exempt index {e} out of range for {n_cols} coefficients"
                )));
            }
        }
        let mut exempt_sorted = self.penalty_exempt.clone();
        exempt_sorted.sort_unstable();
        exempt_sorted.dedup();
        if exempt_sorted.len() != self.penalty_exempt.len() {
            return Err(Error::InvalidSpec("duplicate exempt index".into()));
        }
        match (&self.family, &self.groups) {
            (PenaltyFamily::GroupLasso, None) => {
                return Err(Error::InvalidSpec(
                    "group penalty requires a group partition".into(),
                ));
            }
            (PenaltyFamily::GroupLasso, Some(groups)) => {
                // Groups must partition the penalized indices exactly.
                let mut seen = vec![false; n_cols];
                for g in groups {
                    if g.is_empty() {
                        return Err(Error::InvalidSpec("empty group".into()));
                    }
                    for &j in g {
                        if j >= n_cols {
                            return Err(Error::InvalidSpec(format!(
                                "group index {j} out of range for {n_cols} coefficients"
                            )));
                        }
                        if seen[j] {
                            return Err(Error::InvalidSpec(format!(
                                "coefficient {j} appears in two groups"
                            )));
                        }
                        if exempt_sorted.binary_search(&j).is_ok() {
                            return Err(Error::InvalidSpec(format!(
                                "coefficient {j} is both grouped and exempt"
                            )));
                        }
                        seen[j] = true;
                    }
                }
                for (j, &covered) in seen.iter().enumerate() {
                    if !covered && exempt_sorted.binary_search(&j).is_err() {
                        return Err(Error::InvalidSpec(format!(
                            "coefficient {j} belongs to no group and is not exempt"
                        )));
                    }
                }
            }
            (_, Some(_)) => {
                return Err(Error::InvalidSpec(
                    "groups are only meaningful for the group penalty".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Rescales the reported lambda into the units the low-level solvers
    /// expect, given the stacked row count of the whitened system.
    pub fn in_solver_units(&self, n_rows: usize) -> PenaltySpec {
        let n = n_rows as f64;
        let factor = match self.family {
            PenaltyFamily::Ridge => 2.0 * n,
            _ => n,
        };
        let mut out = self.clone();
        out.lambda = self.lambda * factor;
        out
    }

    /// The penalty functional in reported units, exempt indices excluded:
    /// `||b||_1` (lasso), `alpha ||b||_1 + (1-alpha)/2 ||b||^2` (elastic
    /// net), `||b||^2` (ridge), `sum_g ||b_g||_2` (group).
    pub fn penalty_value(&self, b: &DVector<f64>) -> f64 {
        let exempt: Vec<bool> = {
            let mut v = vec![false; b.len()];
            for &e in &self.penalty_exempt {
                if e < v.len() {
                    v[e] = true;
                }
            }
            v
        };
        match self.family {
            PenaltyFamily::Ridge => b
                .iter()
                .enumerate()
                .filter(|(j, _)| !exempt[*j])
                .map(|(_, v)| v * v)
                .sum(),
            PenaltyFamily::Lasso => b
                .iter()
                .enumerate()
                .filter(|(j, _)| !exempt[*j])
                .map(|(_, v)| v.abs())
                .sum(),
            PenaltyFamily::ElasticNet => {
                let (mut l1, mut l2) = (0.0, 0.0);
                for (j, v) in b.iter().enumerate() {
                    if !exempt[j] {
                        l1 += v.abs();
                        l2 += v * v;
                    }
                }
                self.mixing * l1 + 0.5 * (1.0 - self.mixing) * l2
            }
            PenaltyFamily::GroupLasso => self
                .groups
                .as_ref()
                .map(|groups| {
                    groups
                        .iter()
                        .map(|g| g.iter().map(|&j| b[j] * b[j]).sum::<f64>().sqrt())
                        .sum()
                })
                .unwrap_or(0.0),
        }
    }
}

/// Shrinkage priors on the coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    /// Independent N(0, variance) on each coefficient.
    Gaussian { variance: f64 },
    /// Independent Laplace with the given rate on each coefficient.
    Laplace { rate: f64 },
}

/// Maps a prior to the penalty family and strength whose term added to the
/// exact negative log likelihood reproduces the negative log prior up to a
/// constant: `lambda = 1/(2 variance)` for the Gaussian (multiplying
/// `||b||^2`), `lambda = rate` for the Laplace (multiplying `||b||_1`).
pub fn prior_to_penalty(prior: Prior) -> Result<(PenaltyFamily, f64)> {
    match prior {
        Prior::Gaussian { variance } => {
            if !(variance > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "prior variance must be positive, got {variance}"
                )));
            }
            Ok((PenaltyFamily::Ridge, 1.0 / (2.0 * variance)))
        }
        Prior::Laplace { rate } => {
            if !(rate > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "prior rate must be positive, got {rate}"
                )));
            }
            Ok((PenaltyFamily::Lasso, rate))
        }
    }
}

/// Penalty on the covariance matrix, plus optional conjugate-style prior
/// hyperparameters that fold into the scatter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CovPenalty {
    pub gamma: f64,
    /// Symmetric 0/1 mask selecting which entries are penalized. `None`
    /// penalizes every off-diagonal entry and leaves the diagonal free.
    pub mask: Option<DMatrix<f64>>,
    /// Prior scale matrix, folded into the scatter.
    pub prior_scale: Option<DMatrix<f64>>,
    /// Prior degrees of freedom nu; the mode convention uses
    /// `nu_adj = nu - m - 1`, and an omitted value means `nu_adj = 0`.
    pub prior_dof: Option<f64>,
}

impl CovPenalty {
    pub fn new(gamma: f64) -> Self {
        CovPenalty {
            gamma,
            mask: None,
            prior_scale: None,
            prior_dof: None,
        }
    }

    pub fn with_mask(mut self, mask: DMatrix<f64>) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_prior(mut self, scale: DMatrix<f64>, dof: f64) -> Self {
        self.prior_scale = Some(scale);
        self.prior_dof = Some(dof);
        self
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "gamma must be a nonnegative finite number, got {}",
                self.gamma
            )));
        }
        if let Some(mask) = &self.mask {
            if mask.nrows() != m || mask.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "mask is {}x{}, system has {} equations",
                    mask.nrows(),
                    mask.ncols(),
                    m
                )));
            }
            for i in 0..m {
                for j in 0..m {
                    let v = mask[(i, j)];
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::InvalidSpec(format!(
                            "mask entries must be 0 or 1, got {v} at ({i}, {j})"
                        )));
                    }
                    if mask[(i, j)] != mask[(j, i)] {
                        return Err(Error::InvalidSpec(format!(
                            "mask is not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        if let Some(s0) = &self.prior_scale {
            if s0.nrows() != m || s0.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "prior scale is {}x{}, system has {} equations",
                    s0.nrows(),
                    s0.ncols(),
                    m
                )));
            }
        }
        Ok(())
    }

    /// The penalty mask, defaulting to all ones off the diagonal.
    pub fn mask_for(&self, m: usize) -> DMatrix<f64> {
        match &self.mask {
            Some(mask) => mask.clone(),
            None => {
                let mut p = DMatrix::from_element(m, m, 1.0);
                p.fill_diagonal(0.0);
                p
            }
        }
    }

    /// Folds the prior into the residual scatter, returning the effective
    /// scatter `(T S_B + S0) / (T + nu_adj)` and the effective sample size
    /// `T + nu_adj`. Without prior hyperparameters this is `(S_B, T)`.
    pub fn effective_scatter(&self, scatter: &ResidualScatter) -> Result<(DMatrix<f64>, f64)> {
        let m = scatter.matrix.nrows();
        self.validate(m)?;
        let t = scatter.n_obs as f64;
        let nu_adj = match self.prior_dof {
            Some(nu) => nu - m as f64 - 1.0,
            None => 0.0,
        };
        let t_eff = t + nu_adj;
        if !(t_eff > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "prior degrees of freedom {} leave a nonpositive effective sample size",
                self.prior_dof.unwrap_or(0.0)
            )));
        }
        let mut s_eff = scatter.matrix.clone() * t;
        if let Some(s0) = &self.prior_scale {
            s_eff += s0;
        }
        s_eff /= t_eff;
        Ok((s_eff, t_eff))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_prior_maps_to_ridge_strength() {
        let (family, lambda) = prior_to_penalty(Prior::Gaussian { variance: 0.5 }).unwrap();
        assert_eq!(family, PenaltyFamily::Ridge);
        assert_abs_diff_eq!(lambda, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn flat_gaussian_prior_vanishes() {
        let (_, lambda) = prior_to_penalty(Prior::Gaussian { variance: 1e12 }).unwrap();
        assert!(lambda < 1e-9);
    }

    #[test]
    fn laplace_prior_is_definitional() {
        let (family, lambda) = prior_to_penalty(Prior::Laplace { rate: 2.3 }).unwrap();
        assert_eq!(family, PenaltyFamily::Lasso);
        assert_abs_diff_eq!(lambda, 2.3, epsilon = 1e-15);
    }

    #[test]
    fn nonpositive_prior_scales_are_rejected() {
        assert!(prior_to_penalty(Prior::Gaussian { variance: 0.0 }).is_err());
        assert!(prior_to_penalty(Prior::Laplace { rate: -1.0 }).is_err());
    }

    #[test]
    fn group_partition_must_cover_all_non_exempt_indices() {
        let spec = PenaltySpec::group_lasso(0.1, vec![vec![0, 1], vec![2]]);
        assert!(spec.validate(4).is_err());
        assert!(spec.validate(3).is_ok());

        let overlapping = PenaltySpec::group_lasso(0.1, vec![vec![0, 1], vec![1, 2]]);
        assert!(overlapping.validate(3).is_err());

        let with_exempt =
            PenaltySpec::group_lasso(0.1, vec![vec![1], vec![2]]).with_exempt(vec![0]);
        assert!(with_exempt.validate(3).is_ok());
    }

    #[test]
    fn mixing_and_lambda_ranges_are_checked() {
        assert!(PenaltySpec::elastic_net(0.1, 1.5).validate(2).is_err());
        assert!(PenaltySpec::lasso(-0.1).validate(2).is_err());
        assert!(PenaltySpec::lasso(f64::NAN).validate(2).is_err());
        assert!(PenaltySpec::elastic_net(0.1, 0.5).validate(2).is_ok());
    }

    #[test]
    fn default_mask_penalizes_off_diagonal_only() {
        let mask = CovPenalty::new(0.3).mask_for(3);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 1.0 };
                assert_eq!(mask[(i, j)], expected);
            }
        }
    }

    #[test]
    fn mask_validation_rejects_asymmetry_and_bad_entries() {
        let mut mask = DMatrix::from_element(2, 2, 1.0);
        mask.fill_diagonal(0.0);
        mask[(0, 1)] = 0.5;
        mask[(1, 0)] = 0.5;
        assert!(CovPenalty::new(0.1)
            .with_mask(mask.clone())
            .validate(2)
            .is_err());
        mask[(0, 1)] = 1.0;
        mask[(1, 0)] = 0.0;
        assert!(CovPenalty::new(0.1).with_mask(mask).validate(2).is_err());
    }

    #[test]
    fn effective_scatter_without_prior_is_identity_fold() {
        let scatter = ResidualScatter {
            matrix: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            n_obs: 10,
        };
        let (s_eff, t_eff) = CovPenalty::new(0.0).effective_scatter(&scatter).unwrap();
        assert_abs_diff_eq!(s_eff, scatter.matrix, epsilon = 1e-15);
        assert_abs_diff_eq!(t_eff, 10.0, epsilon = 1e-15);
    }

    #[test]
    fn effective_scatter_folds_prior_scale_at_mode_convention() {
        // nu = m + 1 keeps the effective sample size at T, so the prior
        // scale enters as S0 / T.
        let scatter = ResidualScatter {
            matrix: DMatrix::identity(2, 2),
            n_obs: 5,
        };
        let s0 = DMatrix::from_element(2, 2, 0.5);
        let penalty = CovPenalty::new(0.0).with_prior(s0, 3.0);
        let (s_eff, t_eff) = penalty.effective_scatter(&scatter).unwrap();
        assert_abs_diff_eq!(t_eff, 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s_eff[(0, 0)], 1.0 + 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s_eff[(0, 1)], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn penalty_value_skips_exempt_indices() {
        let b = DVector::from_column_slice(&[3.0, -2.0, 1.0]);
        let lasso = PenaltySpec::lasso(0.1).with_exempt(vec![0]);
        assert_abs_diff_eq!(lasso.penalty_value(&b), 3.0, epsilon = 1e-15);
        let ridge = PenaltySpec::ridge(0.1).with_exempt(vec![2]);
        assert_abs_diff_eq!(ridge.penalty_value(&b), 13.0, epsilon = 1e-15);
        let en = PenaltySpec::elastic_net(0.1, 0.5);
        assert_abs_diff_eq!(en.penalty_value(&b), 0.5 * 6.0 + 0.25 * 14.0, epsilon = 1e-15);
        let group = PenaltySpec::group_lasso(0.1, vec![vec![0, 1], vec![2]]);
        assert_abs_diff_eq!(group.penalty_value(&b), 13.0_f64.sqrt() + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn solver_units_scale_with_rows() {
        let lasso = PenaltySpec::lasso(0.1).in_solver_units(50);
        assert_abs_diff_eq!(lasso.lambda, 5.0, epsilon = 1e-15);
        let ridge = PenaltySpec::ridge(0.1).in_solver_units(50);
        assert_abs_diff_eq!(ridge.lambda, 10.0, epsilon = 1e-15);
    }
}
