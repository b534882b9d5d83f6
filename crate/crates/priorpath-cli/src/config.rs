//! Run configuration: one JSON file describing the data source, model,
//! penalty grids, and per-command settings. Command line flags override
//! individual fields, and the summary echoes the fully resolved
//! configuration so no default stays silent.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use priorpath::{
    simulate_var1, DatasetManifest, Error, ModelSpec, PenaltyFamily, PenaltySpec, Result,
    SelectionCriterion, Strategy, TimeSeriesPanel, VarSpec,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    pub penalty: PenaltyConfig,
    pub cv: CvSection,
    pub irf: IrfSection,
    pub backtest: BacktestSection,
    pub pca: PcaSection,
    pub solver: SolverSection,
    pub output_dir: PathBuf,
    /// Seed for synthetic data generation.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            model: ModelSpec::Var(VarSpec::default()),
            penalty: PenaltyConfig::default(),
            cv: CvSection::default(),
            irf: IrfSection::default(),
            backtest: BacktestSection::default(),
            pca: PcaSection::default(),
            solver: SolverSection::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// Where the panel comes from: a CSV described by a manifest, or a
/// simulated VAR(1) for smoke tests and reproducible benchmarks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataConfig {
    Manifest(DatasetManifest),
    Synthetic(SyntheticData),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticData::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticData {
    pub variables: usize,
    pub rows: usize,
    /// Row-major transition matrix; by default 0.3 on the diagonal.
    pub coefficients: Option<Vec<Vec<f64>>>,
    /// Shock covariance; identity by default.
    pub sigma: Option<Vec<Vec<f64>>>,
}

impl Default for SyntheticData {
    fn default() -> Self {
        SyntheticData {
            variables: 3,
            rows: 160,
            coefficients: None,
            sigma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    pub family: PenaltyFamily,
    /// Elastic net mixing weight on the l1 part; ignored by the other
    /// families.
    pub mixing: f64,
    /// Coefficient groups for the group lasso, as stacked-index lists.
    pub groups: Option<Vec<Vec<usize>>>,
    /// Coefficient penalties, conventionally largest first.
    pub lambda_grid: Vec<f64>,
    /// Covariance penalties.
    pub gamma_grid: Vec<f64>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            family: PenaltyFamily::Ridge,
            mixing: 0.5,
            groups: None,
            lambda_grid: vec![1.0, 0.1, 0.01],
            gamma_grid: vec![0.0],
        }
    }
}

impl PenaltyConfig {
    /// Template with the family settings filled in; the sweep sets lambda.
    pub fn template(&self) -> PenaltySpec {
        let mut spec = PenaltySpec::ridge(0.0);
        spec.family = self.family;
        spec.mixing = self.mixing;
        spec.groups = self.groups.clone();
        spec
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionConfig {
    Cv,
    Aic,
    Bic,
}

impl CriterionConfig {
    pub fn to_library(self) -> SelectionCriterion {
        match self {
            CriterionConfig::Cv => SelectionCriterion::Cv,
            CriterionConfig::Aic => SelectionCriterion::Aic,
            CriterionConfig::Bic => SelectionCriterion::Bic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSection {
    pub window: usize,
    pub horizon: usize,
    pub criterion: CriterionConfig,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            window: 80,
            horizon: 1,
            criterion: CriterionConfig::Cv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrfSection {
    pub horizon: usize,
}

impl Default for IrfSection {
    fn default() -> Self {
        IrfSection { horizon: 10 }
    }
}

/// Risk-free leg of the backtest: a panel column or a flat per-period rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskFreeConfig {
    Column(String),
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    pub window: usize,
    pub risk_aversion: f64,
    pub max_turnover: f64,
    pub weight_bounds: (f64, f64),
    /// Strategy labels: cv_optimal, aic_optimal, var_unregularized,
    /// moving_average.
    pub strategies: Vec<String>,
    /// Leading rows reserved for freezing the cv/aic penalty pairs.
    pub tuning_rows: usize,
    /// Realized return series the weights are applied to; the target
    /// column when omitted.
    pub equity_column: Option<String>,
    /// Required by the backtest command; there is no sensible default.
    pub risk_free: Option<RiskFreeConfig>,
}

impl Default for BacktestSection {
    fn default() -> Self {
        BacktestSection {
            window: 80,
            risk_aversion: 2.0,
            max_turnover: 0.5,
            weight_bounds: (0.0, 1.0),
            strategies: vec![
                "cv_optimal".into(),
                "aic_optimal".into(),
                "var_unregularized".into(),
                "moving_average".into(),
            ],
            tuning_rows: 0,
            equity_column: None,
            risk_free: None,
        }
    }
}

impl BacktestSection {
    pub fn parse_strategies(&self) -> Result<Vec<Strategy>> {
        self.strategies
            .iter()
            .map(|label| match label.as_str() {
                "cv_optimal" => Ok(Strategy::CvOptimal),
                "aic_optimal" => Ok(Strategy::AicOptimal),
                "var_unregularized" => Ok(Strategy::VarUnregularized),
                "moving_average" => Ok(Strategy::MovingAverage),
                other => Err(Error::InvalidSpec(format!(
                    "unknown strategy `{other}`; expected cv_optimal, aic_optimal, \
                     var_unregularized, or moving_average"
                ))),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaSection {
    pub factors: usize,
    pub standardize: bool,
}

impl Default for PcaSection {
    fn default() -> Self {
        PcaSection {
            factors: 2,
            standardize: true,
        }
    }
}

/// Iteration budgets and tolerances forwarded to the solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub fit_max_outer: usize,
    pub fit_tol: f64,
    pub cov_max_outer: usize,
    pub cov_max_inner: usize,
    pub cov_stationarity_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let fit = priorpath::FitSettings::default();
        SolverSection {
            fit_max_outer: fit.max_outer,
            fit_tol: fit.tol,
            cov_max_outer: fit.cov.max_outer,
            cov_max_inner: fit.cov.max_inner,
            cov_stationarity_tol: fit.cov.stationarity_tol,
        }
    }
}

impl SolverSection {
    pub fn to_settings(&self) -> priorpath::FitSettings {
        let mut settings = priorpath::FitSettings::default();
        settings.max_outer = self.fit_max_outer;
        settings.tol = self.fit_tol;
        settings.cov.max_outer = self.cov_max_outer;
        settings.cov.max_inner = self.cov_max_inner;
        settings.cov.stationarity_tol = self.cov_stationarity_tol;
        settings
    }
}

impl RunConfig {
    /// Parses a config file, mapping syntax problems to usage errors.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidSpec(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            Error::InvalidSpec(format!("config {} is not valid: {e}", path.display()))
        })
    }

    /// Produces the panel the commands operate on.
    pub fn load_data(&self) -> Result<TimeSeriesPanel> {
        match &self.data {
            DataConfig::Manifest(manifest) => priorpath::load_panel(manifest),
            DataConfig::Synthetic(syn) => {
                let p = syn.variables;
                let b = match &syn.coefficients {
                    Some(rows) => matrix_from_rows(rows, p, "coefficients")?,
                    None => DMatrix::from_diagonal_element(p, p, 0.3),
                };
                let sigma = match &syn.sigma {
                    Some(rows) => matrix_from_rows(rows, p, "sigma")?,
                    None => DMatrix::identity(p, p),
                };
                simulate_var1(&b, &sigma, &DVector::zeros(p), syn.rows, self.seed)
            }
        }
    }

    /// Resolves a --target override, by column name or zero-based index,
    /// into the model spec.
    pub fn set_target(&mut self, raw: &str, panel: &TimeSeriesPanel) -> Result<()> {
        let index = match raw.parse::<usize>() {
            Ok(i) => i,
            Err(_) => panel.column_index(raw)?,
        };
        match &mut self.model {
            ModelSpec::Var(v) => v.target = index,
            ModelSpec::Sur(s) => s.target_equation = index,
        }
        Ok(())
    }

    /// The panel column the run forecasts.
    pub fn target_index(&self) -> usize {
        match &self.model {
            ModelSpec::Var(v) => v.target,
            ModelSpec::Sur(s) => s.target_equation,
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], p: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != p || rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidSpec(format!(
            "synthetic {what} must be {p}x{p} to match `variables`"
        )));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

/// Parses a comma-separated grid flag such as `1,0.5,0.1`.
pub fn parse_grid(raw: &str) -> Result<Vec<f64>> {
    let values: Result<Vec<f64>> = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidSpec(format!("`{s}` in grid `{raw}` is not a number")))
        })
        .collect();
    let values = values?;
    if values.is_empty() {
        return Err(Error::InvalidSpec("grid flag has no values".into()));
    }
    Ok(values)
}
