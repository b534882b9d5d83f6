//! Model specifications and stacked regression systems.
//!
//! A first-order vector autoregression on a demeaned panel,
//!
//! ```text
//! Z_t = B Z_{t-1} + e_t,        e_t ~ N(0, Sigma),
//! ```
//!
//! stacks into a single regression `z = X vec(B) + e` with `X` the Kronecker
//! product of the lag matrix and the identity. A seemingly unrelated
//! regression system stacks equation by equation instead, giving a
//! block-diagonal design. [`StackedSystem`] keeps that structure explicit so
//! the repeated re-whitenings of the joint estimator can rebuild normal
//! equations cheaply instead of materializing the full design each time.
//!
//! Row ordering follows the stacking that defines each model: VAR systems are
//! time-major (all equations for period t are adjacent), SUR systems are
//! equation-major (all periods of equation i are adjacent). `row_index` maps
//! every stacked row back to its (time, equation) pair, which is what the
//! whitening transform needs.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::panel::TimeSeriesPanel;

/// Natural log of 2*pi, used by the Gaussian likelihood.
pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Specification of a vector autoregression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarSpec {
    /// Number of lags entering the design. Forecast and impulse-response
    /// helpers support order one; design construction supports any order.
    pub lag_order: usize,
    /// Column index of the forecast target.
    pub target: usize,
    /// Demean the panel before fitting and report forecasts in the original
    /// basis.
    pub demean: bool,
}

impl Default for VarSpec {
    fn default() -> Self {
        VarSpec {
            lag_order: 1,
            target: 0,
            demean: true,
        }
    }
}

impl VarSpec {
    pub fn validate(&self, panel: &TimeSeriesPanel) -> Result<()> {
        if self.lag_order == 0 {
            return Err(Error::InvalidSpec("lag order must be at least 1".into()));
        }
        if self.target >= panel.width() {
            return Err(Error::InvalidSpec(format!(
                "target index {} out of range for {} columns",
                self.target,
                panel.width()
            )));
        }
        if panel.len() < self.lag_order + 1 {
            return Err(Error::InvalidSpec(format!(
                "panel has {} rows, need at least {} for lag order {}",
                panel.len(),
                self.lag_order + 1,
                self.lag_order
            )));
        }
        Ok(())
    }
}

/// One equation of a seemingly unrelated regression system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurEquation {
    pub response: String,
    pub regressors: Vec<String>,
}

/// Specification of a seemingly unrelated regression system. Regressors
/// enter lagged by `lag` periods, so the design at time t explains the
/// response at time t + lag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurSpec {
    pub equations: Vec<SurEquation>,
    pub lag: usize,
    /// Prepend an explicit intercept column to every equation. Intercepts
    /// are exempt from coefficient penalties.
    pub intercept: bool,
    /// Equation whose forecast is scored by cross-validation.
    pub target_equation: usize,
}

impl SurSpec {
    pub fn validate(&self, panel: &TimeSeriesPanel) -> Result<()> {
        if self.equations.is_empty() {
            return Err(Error::InvalidSpec("SUR system has no equations".into()));
        }
        if self.target_equation >= self.equations.len() {
            return Err(Error::InvalidSpec(format!(
                "target equation {} out of range for {} equations",
                self.target_equation,
                self.equations.len()
            )));
        }
        if panel.len() < self.lag + 1 {
            return Err(Error::InvalidSpec(format!(
                "panel has {} rows, need at least {} for lag {}",
                panel.len(),
                self.lag + 1,
                self.lag
            )));
        }
        for eq in &self.equations {
            panel.column_index(&eq.response)?;
            for r in &eq.regressors {
                panel.column_index(r)?;
            }
        }
        Ok(())
    }
}

/// Either of the two supported model families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSpec {
    Var(VarSpec),
    Sur(SurSpec),
}

impl ModelSpec {
    pub fn validate(&self, panel: &TimeSeriesPanel) -> Result<()> {
        match self {
            ModelSpec::Var(v) => v.validate(panel),
            ModelSpec::Sur(s) => s.validate(panel),
        }
    }
}

/// Estimated coefficients in the layout native to each model family.
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficients {
    /// `matrix` is p x (p * lag); row i holds equation i's coefficients with
    /// lag-1 regressors first.
    Var { matrix: DMatrix<f64>, lag: usize },
    /// One coefficient vector per equation, intercept first when present.
    Sur { per_equation: Vec<DVector<f64>> },
}

impl Coefficients {
    /// The stacked coefficient vector in the column order of the matching
    /// [`StackedSystem`].
    pub fn stacked(&self) -> DVector<f64> {
        match self {
            Coefficients::Var { matrix, .. } => DVector::from_column_slice(matrix.as_slice()),
            Coefficients::Sur { per_equation } => {
                let total = per_equation.iter().map(|b| b.len()).sum();
                let mut out = DVector::zeros(total);
                let mut at = 0;
                for b in per_equation {
                    out.rows_mut(at, b.len()).copy_from(b);
                    at += b.len();
                }
                out
            }
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.stacked().iter().filter(|v| **v != 0.0).count()
    }

    pub fn active_set(&self) -> Vec<usize> {
        self.stacked()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Residual scatter matrix `S_B = (1/T) sum_t e_t e_t'` together with the
/// lag-adjusted sample size `T` that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualScatter {
    pub matrix: DMatrix<f64>,
    pub n_obs: usize,
}

#[derive(Clone, Debug)]
enum Design {
    /// VAR stacking: design is `lag' (x) mixer`, rows time-major.
    Kronecker {
        /// (p * lag_order) x n_times matrix of lagged regressors.
        lag: Arc<DMatrix<f64>>,
        /// Cached `lag * lag'`.
        lag_gram: Arc<DMatrix<f64>>,
        mixer: Option<DMatrix<f64>>,
    },
    /// SUR stacking: block-diagonal design, rows equation-major.
    BlockDiag {
        blocks: Arc<Vec<DMatrix<f64>>>,
        /// Cached cross products X_i' X_j assembled at block offsets.
        cross_gram: Arc<DMatrix<f64>>,
        offsets: Vec<usize>,
        mixer: Option<DMatrix<f64>>,
    },
    /// Explicit rows, used by tests and by whitening of dense systems.
    Dense(DMatrix<f64>),
}

/// A stacked regression system `y = X b + e` with block structure by time.
#[derive(Clone, Debug)]
pub struct StackedSystem {
    design: Design,
    response: DVector<f64>,
    n_times: usize,
    m: usize,
    col_names: Vec<String>,
    /// Stacked row -> (time, equation).
    row_index: Vec<(usize, usize)>,
    /// Columns exempt from penalties (SUR intercepts).
    intercept_cols: Vec<usize>,
}

impl StackedSystem {
    /// Wraps an explicit design for direct use of the solvers. Rows are
    /// interpreted time-major in blocks of `m` equations.
    pub fn from_parts(design: DMatrix<f64>, response: DVector<f64>, m: usize) -> Result<Self> {
        if m == 0 || design.nrows() == 0 {
            return Err(Error::EmptyInput("empty design".into()));
        }
        if design.nrows() != response.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response {}",
                design.nrows(),
                response.len()
            )));
        }
        if design.nrows() % m != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} rows not divisible into blocks of {m}",
                design.nrows()
            )));
        }
        let n_times = design.nrows() / m;
        let row_index = (0..design.nrows()).map(|r| (r / m, r % m)).collect();
        let col_names = (0..design.ncols()).map(|j| format!("b{j}")).collect();
        Ok(StackedSystem {
            design: Design::Dense(design),
            response,
            n_times,
            m,
            col_names,
            row_index,
            intercept_cols: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_cols(&self) -> usize {
        match &self.design {
            Design::Kronecker { lag, .. } => lag.nrows() * self.m,
            Design::BlockDiag {
                offsets, blocks, ..
            } => offsets.last().copied().unwrap_or(0) + blocks.last().map_or(0, |b| b.ncols()),
            Design::Dense(x) => x.ncols(),
        }
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_equations(&self) -> usize {
        self.m
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn row_index(&self) -> &[(usize, usize)] {
        &self.row_index
    }

    pub fn intercept_cols(&self) -> &[usize] {
        &self.intercept_cols
    }

    /// Materializes the design matrix, mixer included.
    pub fn to_dense_design(&self) -> DMatrix<f64> {
        let k = self.n_cols();
        match &self.design {
            Design::Kronecker { lag, mixer, .. } => {
                let mut x = DMatrix::zeros(self.n_rows(), k);
                for t in 0..self.n_times {
                    for i in 0..self.m {
                        for j in 0..lag.nrows() {
                            match mixer {
                                Some(c) => {
                                    for a in 0..self.m {
                                        x[(t * self.m + i, j * self.m + a)] =
                                            lag[(j, t)] * c[(i, a)];
                                    }
                                }
                                None => {
                                    x[(t * self.m + i, j * self.m + i)] = lag[(j, t)];
                                }
                            }
                        }
                    }
                }
                x
            }
            Design::BlockDiag {
                blocks,
                offsets,
                mixer,
                ..
            } => {
                let n = self.n_times;
                let mut x = DMatrix::zeros(self.n_rows(), k);
                for i in 0..self.m {
                    for t in 0..n {
                        for (j, block) in blocks.iter().enumerate() {
                            let w = match mixer {
                                Some(c) => c[(i, j)],
                                None if i == j => 1.0,
                                None => 0.0,
                            };
                            if w != 0.0 {
                                for a in 0..block.ncols() {
                                    x[(i * n + t, offsets[j] + a)] = w * block[(t, a)];
                                }
                            }
                        }
                    }
                }
                x
            }
            Design::Dense(x) => x.clone(),
        }
    }

    /// Normal equations of the (possibly whitened) system: the Gram matrix
    /// `X'X`, the moment vector `X'y`, and `y'y`. Structured designs
    /// assemble these from cached cross products.
    pub fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>, f64) {
        let yty = self.response.norm_squared();
        match &self.design {
            Design::Kronecker {
                lag,
                lag_gram,
                mixer,
            } => {
                let kreg = lag.nrows();
                let m = self.m;
                let w = match mixer {
                    Some(c) => c.transpose() * c,
                    None => DMatrix::identity(m, m),
                };
                let mut g = DMatrix::zeros(kreg * m, kreg * m);
                for j in 0..kreg {
                    for j2 in 0..kreg {
                        let s = lag_gram[(j, j2)];
                        for a in 0..m {
                            for b in 0..m {
                                g[(j * m + a, j2 * m + b)] = s * w[(a, b)];
                            }
                        }
                    }
                }
                // Response reshaped to m x n_times, then q = vec(C' Y lag').
                let y = DMatrix::from_column_slice(m, self.n_times, self.response.as_slice());
                let u = match mixer {
                    Some(c) => c.transpose() * &y,
                    None => y,
                };
                let moments = u * lag.transpose();
                let q = DVector::from_column_slice(moments.as_slice());
                (g, q, yty)
            }
            Design::BlockDiag {
                blocks,
                cross_gram,
                offsets,
                mixer,
            } => {
                let m = self.m;
                let n = self.n_times;
                let k = self.n_cols();
                let w = match mixer {
                    Some(c) => c.transpose() * c,
                    None => DMatrix::identity(m, m),
                };
                let mut g = DMatrix::zeros(k, k);
                for i in 0..m {
                    for j in 0..m {
                        let wij = w[(i, j)];
                        if wij == 0.0 {
                            continue;
                        }
                        for a in 0..blocks[i].ncols() {
                            for b in 0..blocks[j].ncols() {
                                g[(offsets[i] + a, offsets[j] + b)] =
                                    wij * cross_gram[(offsets[i] + a, offsets[j] + b)];
                            }
                        }
                    }
                }
                let y = DMatrix::from_column_slice(n, m, self.response.as_slice());
                // u[:, i] = sum_k mixer[k, i] * y[:, k]; identity mixer keeps y.
                let u = match mixer {
                    Some(c) => &y * c,
                    None => y,
                };
                let mut q = DVector::zeros(k);
                for i in 0..m {
                    let qi = blocks[i].transpose() * u.column(i);
                    q.rows_mut(offsets[i], blocks[i].ncols()).copy_from(&qi);
                }
                (g, q, yty)
            }
            Design::Dense(x) => {
                let g = x.transpose() * x;
                let q = x.transpose() * &self.response;
                (g, q, yty)
            }
        }
    }

    /// Premultiplies every time block of rows by `c`, returning the
    /// transformed system. Structured designs keep their structure by
    /// composing `c` into the stored mixer.
    pub(crate) fn mixed(&self, c: &DMatrix<f64>) -> StackedSystem {
        let mut out = self.clone();
        match &mut out.design {
            Design::Kronecker { mixer, .. } | Design::BlockDiag { mixer, .. } => {
                *mixer = Some(match mixer.take() {
                    Some(old) => c * old,
                    None => c.clone(),
                });
            }
            Design::Dense(x) => {
                let mut rows_at = vec![vec![0usize; out.m]; out.n_times];
                for (r, &(t, i)) in out.row_index.iter().enumerate() {
                    rows_at[t][i] = r;
                }
                for group in &rows_at {
                    let mut block = DMatrix::zeros(out.m, x.ncols());
                    for (i, &r) in group.iter().enumerate() {
                        block.set_row(i, &x.row(r).into_owned());
                    }
                    let mixed = c * block;
                    for (i, &r) in group.iter().enumerate() {
                        x.set_row(r, &mixed.row(i));
                    }
                }
            }
        }
        // Response blocks transform the same way for every design layout.
        let mut rows_at = vec![vec![0usize; self.m]; self.n_times];
        for (r, &(t, i)) in self.row_index.iter().enumerate() {
            rows_at[t][i] = r;
        }
        for group in &rows_at {
            let block = DVector::from_iterator(self.m, group.iter().map(|&r| self.response[r]));
            let mixed = c * block;
            for (i, &r) in group.iter().enumerate() {
                out.response[r] = mixed[i];
            }
        }
        out
    }

    /// Rebuilds model-native coefficients from a stacked solution vector.
    pub fn coefficients_from_stacked(&self, b: &DVector<f64>) -> Coefficients {
        match &self.design {
            Design::Kronecker { lag, .. } => Coefficients::Var {
                matrix: DMatrix::from_column_slice(self.m, lag.nrows(), b.as_slice()),
                lag: lag.nrows() / self.m,
            },
            Design::BlockDiag {
                blocks, offsets, ..
            } => Coefficients::Sur {
                per_equation: blocks
                    .iter()
                    .zip(offsets)
                    .map(|(blk, &off)| b.rows(off, blk.ncols()).into_owned())
                    .collect(),
            },
            Design::Dense(_) => Coefficients::Sur {
                per_equation: vec![b.clone()],
            },
        }
    }
}

/// Builds the stacked VAR design from a demeaned panel.
///
/// Row `t * p + i` of the system is the equation for variable i at effective
/// time t; the regressor block is the Kronecker row `z_lagged' (x) e_i`.
pub fn build_var_design(panel: &TimeSeriesPanel, spec: &VarSpec) -> Result<StackedSystem> {
    spec.validate(panel)?;
    let p = panel.width();
    let ell = spec.lag_order;
    let n_times = panel.len() - ell;
    let z = panel.values();

    let mut lag = DMatrix::zeros(p * ell, n_times);
    let mut response = DVector::zeros(p * n_times);
    for t in 0..n_times {
        for k in 1..=ell {
            for v in 0..p {
                lag[((k - 1) * p + v, t)] = z[(t + ell - k, v)];
            }
        }
        for i in 0..p {
            response[t * p + i] = z[(t + ell, i)];
        }
    }
    let lag_gram = &lag * lag.transpose();

    let names = panel.names();
    let mut col_names = Vec::with_capacity(p * p * ell);
    for k in 1..=ell {
        for v in 0..p {
            for i in 0..p {
                col_names.push(format!("{}~{}.l{}", names[i], names[v], k));
            }
        }
    }
    let row_index = (0..p * n_times).map(|r| (r / p, r % p)).collect();

    Ok(StackedSystem {
        design: Design::Kronecker {
            lag: Arc::new(lag),
            lag_gram: Arc::new(lag_gram),
            mixer: None,
        },
        response,
        n_times,
        m: p,
        col_names,
        row_index,
        intercept_cols: Vec::new(),
    })
}

/// Builds the block-diagonal SUR design. Equation i's block regresses its
/// response at time t + lag on the declared regressors at time t, with an
/// optional leading intercept column.
pub fn build_sur_design(panel: &TimeSeriesPanel, spec: &SurSpec) -> Result<StackedSystem> {
    spec.validate(panel)?;
    let m = spec.equations.len();
    let n_times = panel.len() - spec.lag;
    let z = panel.values();

    let mut blocks = Vec::with_capacity(m);
    let mut offsets = Vec::with_capacity(m);
    let mut col_names = Vec::new();
    let mut intercept_cols = Vec::new();
    let mut response = DVector::zeros(m * n_times);
    let mut at = 0;
    for (i, eq) in spec.equations.iter().enumerate() {
        let resp_idx = panel.column_index(&eq.response)?;
        let extra = usize::from(spec.intercept);
        let mut block = DMatrix::zeros(n_times, eq.regressors.len() + extra);
        if spec.intercept {
            block.column_mut(0).fill(1.0);
            intercept_cols.push(at);
            col_names.push(format!("{}~const", eq.response));
        }
        for (a, reg) in eq.regressors.iter().enumerate() {
            let reg_idx = panel.column_index(reg)?;
            for t in 0..n_times {
                block[(t, a + extra)] = z[(t, reg_idx)];
            }
            col_names.push(format!("{}~{}", eq.response, reg));
        }
        for t in 0..n_times {
            response[i * n_times + t] = z[(t + spec.lag, resp_idx)];
        }
        offsets.push(at);
        at += block.ncols();
        blocks.push(block);
    }

    let k = at;
    let mut cross_gram = DMatrix::zeros(k, k);
    for i in 0..m {
        for j in 0..m {
            let prod = blocks[i].transpose() * &blocks[j];
            for a in 0..blocks[i].ncols() {
                for b in 0..blocks[j].ncols() {
                    cross_gram[(offsets[i] + a, offsets[j] + b)] = prod[(a, b)];
                }
            }
        }
    }

    let mut row_index = Vec::with_capacity(m * n_times);
    for i in 0..m {
        for t in 0..n_times {
            row_index.push((t, i));
        }
    }

    Ok(StackedSystem {
        design: Design::BlockDiag {
            blocks: Arc::new(blocks),
            cross_gram: Arc::new(cross_gram),
            offsets,
            mixer: None,
        },
        response,
        n_times,
        m,
        col_names,
        row_index,
        intercept_cols,
    })
}

/// Residual scatter `S_B` for the given coefficients.
///
/// For a VAR, `means` (when supplied) is subtracted from every observation
/// before residuals are formed; pass `None` for a panel that is already
/// centered. SUR residuals are computed on the raw columns and reject a
/// `means` argument.
pub fn residual_scatter(
    panel: &TimeSeriesPanel,
    model: &ModelSpec,
    coefs: &Coefficients,
    means: Option<&DVector<f64>>,
) -> Result<ResidualScatter> {
    model.validate(panel)?;
    match (model, coefs) {
        (ModelSpec::Var(spec), Coefficients::Var { matrix, .. }) => {
            let p = panel.width();
            let ell = spec.lag_order;
            if matrix.nrows() != p || matrix.ncols() != p * ell {
                return Err(Error::DimensionMismatch(format!(
                    "coefficient matrix is {}x{}, expected {}x{}",
                    matrix.nrows(),
                    matrix.ncols(),
                    p,
                    p * ell
                )));
            }
            if let Some(mu) = means {
                if mu.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "means vector has {} entries, panel has {} columns",
                        mu.len(),
                        p
                    )));
                }
            }
            let z = panel.values();
            let n_eff = panel.len() - ell;
            let centered = |t: usize, v: usize| match means {
                Some(mu) => z[(t, v)] - mu[v],
                None => z[(t, v)],
            };
            let mut scatter = DMatrix::zeros(p, p);
            let mut eps = DVector::zeros(p);
            for t in ell..panel.len() {
                for i in 0..p {
                    let mut fitted = 0.0;
                    for k in 1..=ell {
                        for v in 0..p {
                            fitted += matrix[(i, (k - 1) * p + v)] * centered(t - k, v);
                        }
                    }
                    eps[i] = centered(t, i) - fitted;
                }
                scatter.syger(1.0, &eps, &eps, 1.0);
            }
            scatter /= n_eff as f64;
            // syger fills the lower triangle; mirror it.
            for i in 0..p {
                for j in (i + 1)..p {
                    scatter[(i, j)] = scatter[(j, i)];
                }
            }
            Ok(ResidualScatter {
                matrix: scatter,
                n_obs: n_eff,
            })
        }
        (ModelSpec::Sur(spec), Coefficients::Sur { per_equation }) => {
            if means.is_some() {
                return Err(Error::InvalidSpec(
                    "SUR residuals are computed on raw columns; means are not supported".into(),
                ));
            }
            let m = spec.equations.len();
            if per_equation.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "{} coefficient vectors for {} equations",
                    per_equation.len(),
                    m
                )));
            }
            let z = panel.values();
            let n_eff = panel.len() - spec.lag;
            let extra = usize::from(spec.intercept);
            let mut eps = DVector::zeros(m);
            let mut scatter = DMatrix::zeros(m, m);
            for (i, eq) in spec.equations.iter().enumerate() {
                if per_equation[i].len() != eq.regressors.len() + extra {
                    return Err(Error::DimensionMismatch(format!(
                        "equation {} has {} coefficients, expected {}",
                        i,
                        per_equation[i].len(),
                        eq.regressors.len() + extra
                    )));
                }
            }
            let resp_idx: Vec<usize> = spec
                .equations
                .iter()
                .map(|eq| panel.column_index(&eq.response))
                .collect::<Result<_>>()?;
            let reg_idx: Vec<Vec<usize>> = spec
                .equations
                .iter()
                .map(|eq| {
                    eq.regressors
                        .iter()
                        .map(|r| panel.column_index(r))
                        .collect::<Result<_>>()
                })
                .collect::<Result<_>>()?;
            for t in 0..n_eff {
                for i in 0..m {
                    let b = &per_equation[i];
                    let mut fitted = if spec.intercept { b[0] } else { 0.0 };
                    for (a, &r) in reg_idx[i].iter().enumerate() {
                        fitted += b[a + extra] * z[(t, r)];
                    }
                    eps[i] = z[(t + spec.lag, resp_idx[i])] - fitted;
                }
                scatter.syger(1.0, &eps, &eps, 1.0);
            }
            scatter /= n_eff as f64;
            for i in 0..m {
                for j in (i + 1)..m {
                    scatter[(i, j)] = scatter[(j, i)];
                }
            }
            Ok(ResidualScatter {
                matrix: scatter,
                n_obs: n_eff,
            })
        }
        _ => Err(Error::InvalidSpec(
            "coefficient layout does not match the model family".into(),
        )),
    }
}

/// Exact Gaussian negative log likelihood
/// `(T m / 2) ln 2 pi + (T/2) (ln det Sigma + tr(Sigma^-1 S_B))`.
pub fn neg_log_likelihood(scatter: &ResidualScatter, sigma: &DMatrix<f64>) -> Result<f64> {
    let m = scatter.matrix.nrows();
    if sigma.nrows() != m || sigma.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "sigma is {}x{}, scatter is {}x{}",
            sigma.nrows(),
            sigma.ncols(),
            m,
            m
        )));
    }
    let chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("sigma in likelihood".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = chol.solve(&scatter.matrix).trace();
    let t = scatter.n_obs as f64;
    Ok(0.5 * t * (m as f64) * LN_2PI + 0.5 * t * (log_det + trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Frequency, Period};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn panel_from(values: DMatrix<f64>) -> TimeSeriesPanel {
        let names = (0..values.ncols()).map(|i| format!("y{i}")).collect();
        let start = Period::new(1950, 1, Frequency::Quarterly).unwrap();
        TimeSeriesPanel::with_start(start, names, values).unwrap()
    }

    fn random_panel(t: usize, p: usize, seed: u64) -> TimeSeriesPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = DMatrix::from_fn(t, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        panel_from(values)
    }

    /// Per-equation least squares computed straight from the panel, used as
    /// an oracle for the stacked representation.
    fn equationwise_ols(panel: &TimeSeriesPanel) -> DMatrix<f64> {
        let p = panel.width();
        let t = panel.len();
        let z = panel.values();
        let mut x = DMatrix::zeros(t - 1, p);
        let mut y = DMatrix::zeros(t - 1, p);
        for r in 0..t - 1 {
            for c in 0..p {
                x[(r, c)] = z[(r, c)];
                y[(r, c)] = z[(r + 1, c)];
            }
        }
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let sol = xtx.lu().solve(&xty).unwrap();
        sol.transpose()
    }

    #[test]
    fn var_design_single_effective_observation_is_kronecker_row() {
        // Two rows: Z_0 is the regressor, Z_1 the response.
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let sys = build_var_design(&panel_from(values), &VarSpec::default()).unwrap();
        assert_eq!(sys.n_rows(), 2);
        assert_eq!(sys.n_cols(), 4);
        let x = sys.to_dense_design();
        // Row for equation i has Z_0 spread over columns j*2 + i.
        let expected = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 2.0]);
        assert_abs_diff_eq!(x, expected, epsilon = 1e-15);
        assert_eq!(sys.response(), &DVector::from_column_slice(&[3.0, 4.0]));
    }

    #[test]
    fn var_design_degenerates_to_ar1_for_single_series() {
        let values = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 4.0, 8.0]);
        let sys = build_var_design(&panel_from(values), &VarSpec::default()).unwrap();
        assert_eq!(sys.n_cols(), 1);
        let x = sys.to_dense_design();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 4.0]);
        assert_eq!(sys.response().as_slice(), &[2.0, 4.0, 8.0]);
    }

    #[test]
    fn var_design_rejects_short_panels() {
        let values = DMatrix::from_element(1, 2, 1.0);
        assert!(build_var_design(&panel_from(values), &VarSpec::default()).is_err());
        let values = DMatrix::from_element(2, 2, 1.0);
        let spec = VarSpec {
            lag_order: 2,
            ..VarSpec::default()
        };
        assert!(build_var_design(&panel_from(values), &spec).is_err());
    }

    #[test]
    fn stacked_ols_matches_equationwise_ols() {
        let panel = random_panel(7, 3, 42);
        let sys = build_var_design(&panel, &VarSpec::default()).unwrap();
        let (g, q, _) = sys.normal_equations();
        let b = g.lu().solve(&q).unwrap();
        let stacked = sys.coefficients_from_stacked(&b);
        let oracle = equationwise_ols(&panel);
        match stacked {
            Coefficients::Var { matrix, .. } => {
                assert_abs_diff_eq!(matrix, oracle, epsilon = 1e-10);
            }
            _ => panic!("expected VAR coefficients"),
        }
    }

    #[test]
    fn sur_design_single_equation_is_plain_regression() {
        let values = DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
        let spec = SurSpec {
            equations: vec![SurEquation {
                response: "y0".into(),
                regressors: vec!["y1".into()],
            }],
            lag: 1,
            intercept: false,
            target_equation: 0,
        };
        let sys = build_sur_design(&panel_from(values), &spec).unwrap();
        assert_eq!(sys.n_cols(), 1);
        assert_eq!(sys.n_equations(), 1);
        let x = sys.to_dense_design();
        assert_eq!(x.as_slice(), &[10.0, 20.0]);
        assert_eq!(sys.response().as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn sur_design_records_intercepts_and_block_layout() {
        let panel = random_panel(10, 5, 7);
        let spec = SurSpec {
            equations: vec![
                SurEquation {
                    response: "y0".into(),
                    regressors: vec!["y2".into(), "y3".into()],
                },
                SurEquation {
                    response: "y1".into(),
                    regressors: vec!["y2".into(), "y3".into(), "y4".into()],
                },
            ],
            lag: 1,
            intercept: true,
            target_equation: 0,
        };
        let sys = build_sur_design(&panel, &spec).unwrap();
        assert_eq!(sys.n_cols(), 3 + 4);
        assert_eq!(sys.intercept_cols(), &[0, 3]);
        assert_eq!(sys.col_names()[0], "y0~const");
        assert_eq!(sys.col_names()[4], "y1~y2");
        // Off-diagonal blocks of the unmixed dense design are zero.
        let x = sys.to_dense_design();
        let n = sys.n_times();
        for t in 0..n {
            for c in 3..7 {
                assert_eq!(x[(t, c)], 0.0);
            }
        }
    }

    #[test]
    fn sur_design_rejects_unknown_columns() {
        let panel = random_panel(5, 2, 1);
        let spec = SurSpec {
            equations: vec![SurEquation {
                response: "nope".into(),
                regressors: vec!["y0".into()],
            }],
            lag: 1,
            intercept: false,
            target_equation: 0,
        };
        assert!(matches!(
            build_sur_design(&panel, &spec).unwrap_err(),
            Error::UnknownColumn(_)
        ));
    }

    #[test]
    fn scatter_of_alternating_series_with_zero_coefficients_is_one() {
        let values = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let panel = panel_from(values);
        let coefs = Coefficients::Var {
            matrix: DMatrix::zeros(1, 1),
            lag: 1,
        };
        let model = ModelSpec::Var(VarSpec::default());
        let s = residual_scatter(&panel, &model, &coefs, None).unwrap();
        assert_eq!(s.n_obs, 3);
        assert_abs_diff_eq!(s.matrix[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn scatter_vanishes_for_exact_fit() {
        // Z_t = B Z_{t-1} exactly, no noise.
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let mut values = DMatrix::zeros(6, 2);
        values[(0, 0)] = 1.0;
        values[(0, 1)] = -1.0;
        for t in 1..6 {
            let prev = values.row(t - 1).transpose();
            let next = &b * prev;
            values[(t, 0)] = next[0];
            values[(t, 1)] = next[1];
        }
        let panel = panel_from(values);
        let coefs = Coefficients::Var {
            matrix: b,
            lag: 1,
        };
        let model = ModelSpec::Var(VarSpec::default());
        let s = residual_scatter(&panel, &model, &coefs, None).unwrap();
        assert_abs_diff_eq!(s.matrix.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn scatter_matches_brute_force_on_random_panel() {
        let panel = random_panel(9, 3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() * 0.4 - 0.2);
        let coefs = Coefficients::Var {
            matrix: b.clone(),
            lag: 1,
        };
        let model = ModelSpec::Var(VarSpec::default());
        let s = residual_scatter(&panel, &model, &coefs, None).unwrap();

        // Brute force: accumulate residual outer products directly.
        let z = panel.values();
        let mut expect = DMatrix::zeros(3, 3);
        for t in 1..9 {
            let prev = z.row(t - 1).transpose();
            let eps = z.row(t).transpose() - &b * prev;
            expect += &eps * eps.transpose();
        }
        expect /= 8.0;
        assert_abs_diff_eq!(s.matrix, expect, epsilon = 1e-12);
        // Scatter is symmetric PSD by construction.
        assert_abs_diff_eq!(s.matrix.clone(), s.matrix.transpose(), epsilon = 1e-14);
        assert!(Cholesky::new(s.matrix + DMatrix::identity(3, 3) * 1e-12).is_some());
    }

    #[test]
    fn likelihood_of_zero_residuals_at_identity_sigma() {
        let scatter = ResidualScatter {
            matrix: DMatrix::zeros(2, 2),
            n_obs: 2,
        };
        let sigma = DMatrix::identity(2, 2);
        let nll = neg_log_likelihood(&scatter, &sigma).unwrap();
        // (T p / 2) ln 2 pi with T = p = 2.
        assert_abs_diff_eq!(nll, 2.0 * LN_2PI, epsilon = 1e-12);
        assert_abs_diff_eq!(nll, 3.675754132818691, epsilon = 1e-9);
    }

    #[test]
    fn likelihood_scales_with_sample_size() {
        let scatter_small = ResidualScatter {
            matrix: DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.9]),
            n_obs: 5,
        };
        let scatter_large = ResidualScatter {
            matrix: scatter_small.matrix.clone(),
            n_obs: 10,
        };
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.5]);
        let small = neg_log_likelihood(&scatter_small, &sigma).unwrap();
        let large = neg_log_likelihood(&scatter_large, &sigma).unwrap();
        assert_abs_diff_eq!(large, 2.0 * small, epsilon = 1e-10);
    }

    #[test]
    fn likelihood_matches_density_sum_oracle() {
        // Independent evaluation: sum of multivariate normal log densities
        // over the residuals of a random panel under B = 0.
        let panel = random_panel(12, 3, 99);
        let model = ModelSpec::Var(VarSpec::default());
        let coefs = Coefficients::Var {
            matrix: DMatrix::zeros(3, 3),
            lag: 1,
        };
        let s = residual_scatter(&panel, &model, &coefs, None).unwrap();
        let sigma = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.3, 0.1, 0.3, 1.3, -0.2, 0.1, -0.2, 0.8],
        );
        let nll = neg_log_likelihood(&s, &sigma).unwrap();

        let inv = sigma.clone().try_inverse().unwrap();
        let det = sigma.determinant();
        let z = panel.values();
        let mut total = 0.0;
        for t in 1..12 {
            let eps = z.row(t).transpose();
            let quad = (eps.transpose() * &inv * &eps)[(0, 0)];
            total += -0.5 * (3.0 * LN_2PI + det.ln() + quad);
        }
        assert_abs_diff_eq!(nll, -total, epsilon = 1e-10 * total.abs());
    }

    #[test]
    fn likelihood_rejects_indefinite_sigma() {
        let scatter = ResidualScatter {
            matrix: DMatrix::identity(2, 2),
            n_obs: 4,
        };
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            neg_log_likelihood(&scatter, &sigma).unwrap_err(),
            Error::NotPositiveDefinite(_)
        ));
    }

    #[test]
    fn coefficients_stack_in_design_column_order() {
        let panel = random_panel(6, 2, 3);
        let sys = build_var_design(&panel, &VarSpec::default()).unwrap();
        let matrix = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        let coefs = Coefficients::Var { matrix, lag: 1 };
        // Column-major stacking: (eq0,reg0), (eq1,reg0), (eq0,reg1), (eq1,reg1).
        assert_eq!(coefs.stacked().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sys.col_names()[1], "y1~y0.l1");
        assert_eq!(coefs.count_nonzero(), 4);
    }
}
