//! Experiment configuration documents and their resolution into concrete problems.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mfpilot_core::acv::OptimizerConfig;
use mfpilot_core::covinfer::{scatter_and_stats, TruncationMode};
use mfpilot_core::matparam::{compose_cov, decompose_cov};
use mfpilot_core::models::TabularSchema;
use mfpilot_core::{
    gamma_forward, monomial_ensemble, monomial_oracle_cov, AllocationFamily, CorrelationMatrix, CostModel,
    CovPosterior, CovarianceMatrix, GammaGaussian, GammaStructure, InferenceConfig, InverseWishartParams, LossConfig,
    ModelEnsemble, PilotData, RngStream, TabularEnsemble,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult};

/// Total budget, either absolute or in multiples of one joint pilot sample `Σw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    PilotMultiple(f64),
    Absolute(f64),
}

impl Budget {
    pub fn resolve(self, w: &CostModel) -> f64 {
        match self {
            Self::PilotMultiple(x) => x * w.total(),
            Self::Absolute(b) => b,
        }
    }

    pub fn pilot_multiple(self, w: &CostModel) -> f64 {
        match self {
            Self::PilotMultiple(x) => x,
            Self::Absolute(b) => b / w.total(),
        }
    }
}

impl FromStr for Budget {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let t = s.trim();
        let (num, multiple) = match t.strip_suffix("x-pilot").or_else(|| t.strip_suffix('x')) {
            Some(n) => (n, true),
            None => (t, false),
        };
        let v: f64 = num
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("budget `{s}` is neither a number nor `<n>x-pilot`")))?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(CliError::Validation(format!("budget `{s}` must be positive")));
        }
        Ok(if multiple { Self::PilotMultiple(v) } else { Self::Absolute(v) })
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PilotMultiple(x) => write!(f, "{x}x-pilot"),
            Self::Absolute(b) => write!(f, "{b}"),
        }
    }
}

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::PilotMultiple(_) => s.serialize_str(&self.to_string()),
            Self::Absolute(b) => s.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Budget::from_str(&v.to_string()),
            Raw::Text(t) => Budget::from_str(&t),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// A value given once for every model or listed per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerEntry {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PerEntry {
    fn expand(&self, n: usize, name: &str) -> CliResult<DVector<f64>> {
        match self {
            Self::Scalar(v) => Ok(DVector::from_element(n, *v)),
            Self::Vector(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Self::Vector(v) => Err(CliError::Validation(format!("{name} has {} entries, expected {n}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleSpec {
    Monomial {
        n_models: usize,
    },
    Tabular {
        table: PathBuf,
        metadata: PathBuf,
        /// JSON matrix with the exact output covariance. Without it the full table's
        /// sample covariance stands in for the oracle.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        oracle: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorFamily {
    #[serde(rename = "iw")]
    InverseWishart,
    #[serde(rename = "gamma-diag")]
    GammaDiag,
    #[serde(rename = "gamma-full")]
    GammaFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorCenter {
    /// Centered on the correlation and scales given in the document.
    #[default]
    Config,
    /// Centered on the oracle covariance (informative priors).
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub family: PriorFamily,
    #[serde(default)]
    pub center: PriorCenter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_mean: Option<Vec<f64>>,
    /// Standard deviations composing the inverse-Wishart prior mean.
    #[serde(default = "default_sigma")]
    pub sigma: PerEntry,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(default = "unit")]
    pub gamma_var: PerEntry,
    #[serde(default = "default_log_sigma_mean")]
    pub log_sigma_mean: PerEntry,
    #[serde(default = "unit")]
    pub log_sigma_var: PerEntry,
}

fn default_sigma() -> PerEntry {
    PerEntry::Scalar(0.1)
}
fn default_nu() -> f64 {
    6.0
}
fn unit() -> PerEntry {
    PerEntry::Scalar(1.0)
}
fn default_log_sigma_mean() -> PerEntry {
    PerEntry::Scalar(0.1)
}

fn matrix_from_rows(rows: &[Vec<f64>], m: usize, name: &str) -> CliResult<DMatrix<f64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(CliError::Validation(format!("{name} must be a {m}x{m} matrix")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

impl PriorSpec {
    fn correlation(&self, m: usize) -> CliResult<CorrelationMatrix> {
        match &self.correlation {
            Some(rows) => Ok(CorrelationMatrix::new(matrix_from_rows(rows, m, "prior.correlation")?)?),
            None => Ok(CorrelationMatrix::identity(m)),
        }
    }

    /// Builds the prior for `m` models; `oracle` is needed for oracle-centered priors.
    pub fn build(&self, m: usize, oracle: Option<&CovarianceMatrix>) -> CliResult<CovPosterior> {
        let oracle = match self.center {
            PriorCenter::Oracle => Some(oracle.ok_or_else(|| {
                CliError::Validation("an oracle-centered prior needs an oracle covariance".into())
            })?),
            PriorCenter::Config => None,
        };
        match self.family {
            PriorFamily::InverseWishart => {
                if let Some(h) = &self.h {
                    return Ok(CovPosterior::InverseWishart(InverseWishartParams::new(
                        matrix_from_rows(h, m, "prior.h")?,
                        self.nu,
                    )?));
                }
                let sigma0 = match oracle {
                    Some(s) => s.clone(),
                    None => compose_cov(&self.sigma.expand(m, "prior.sigma")?, &self.correlation(m)?)?,
                };
                Ok(CovPosterior::InverseWishart(InverseWishartParams::with_mean(&sigma0, self.nu)?))
            }
            PriorFamily::GammaDiag | PriorFamily::GammaFull => {
                let l = m * (m - 1) / 2;
                let (mean_gamma, mean_logsigma) = match oracle {
                    Some(s) => {
                        let (sig, r) = decompose_cov(s)?;
                        (gamma_forward(&r)?, sig.map(f64::ln))
                    }
                    None => {
                        let g = match &self.gamma_mean {
                            Some(g) if g.len() == l => DVector::from_column_slice(g),
                            Some(g) => {
                                return Err(CliError::Validation(format!(
                                    "prior.gamma_mean has {} entries, expected {l}",
                                    g.len()
                                )))
                            }
                            None => gamma_forward(&self.correlation(m)?)?,
                        };
                        (g, self.log_sigma_mean.expand(m, "prior.log_sigma_mean")?)
                    }
                };
                let structure = match self.family {
                    PriorFamily::GammaDiag => GammaStructure::Diagonal,
                    _ => GammaStructure::Full,
                };
                let cov = DMatrix::from_diagonal(&self.gamma_var.expand(l, "prior.gamma_var")?);
                Ok(CovPosterior::GammaGaussian(GammaGaussian::new(
                    structure,
                    mean_gamma,
                    cov,
                    mean_logsigma,
                    self.log_sigma_var.expand(m, "prior.log_sigma_var")?,
                )?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub n_mc: usize,
    pub families: Vec<AllocationFamily>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_family: Option<AllocationFamily>,
    pub adaptive_nmc: bool,
    pub target_resolution_ratio: f64,
    pub n_starts: usize,
}

impl Default for LossSpec {
    fn default() -> Self {
        let d = LossConfig::default();
        Self {
            n_mc: d.n_mc,
            families: d.families,
            fixed_family: None,
            adaptive_nmc: d.adaptive_nmc,
            target_resolution_ratio: d.target_resolution_ratio,
            n_starts: d.optimizer.n_starts,
        }
    }
}

impl LossSpec {
    pub fn to_config(&self, seed: RngStream) -> LossConfig {
        LossConfig {
            n_mc: self.n_mc,
            seed,
            fixed_family: self.fixed_family,
            families: self.families.clone(),
            adaptive_nmc: self.adaptive_nmc,
            target_resolution_ratio: self.target_resolution_ratio,
            optimizer: OptimizerConfig {
                n_starts: self.n_starts,
                ..OptimizerConfig::default()
            },
        }
    }

    pub fn family_set(&self) -> Vec<AllocationFamily> {
        match self.fixed_family {
            Some(f) => vec![f],
            None => self.families.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSpec {
    pub n_sim: usize,
    pub trunc_quantiles: (f64, f64),
    pub truncation: TruncationMode,
    pub projection_pin_logsigma_mean: bool,
}

impl Default for InferenceSpec {
    fn default() -> Self {
        let d = InferenceConfig::default();
        Self {
            n_sim: d.n_sim,
            trunc_quantiles: d.trunc_quantiles,
            truncation: d.truncation,
            projection_pin_logsigma_mean: d.projection_pin_logsigma_mean,
        }
    }
}

impl InferenceSpec {
    pub fn to_config(&self, rng: RngStream) -> InferenceConfig {
        InferenceConfig {
            n_sim: self.n_sim,
            trunc_quantiles: self.trunc_quantiles,
            truncation: self.truncation,
            projection_pin_logsigma_mean: self.projection_pin_logsigma_mean,
            rng,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesSpec {
    /// Budgets to tabulate; the experiment budget when empty.
    pub budgets: Vec<Budget>,
}

impl Default for BaselinesSpec {
    fn default() -> Self {
        Self {
            budgets: vec![Budget::PilotMultiple(50.0), Budget::PilotMultiple(100.0), Budget::PilotMultiple(200.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotStudySpec {
    pub grid: Vec<usize>,
    pub n_seeds: usize,
}

impl Default for PilotStudySpec {
    fn default() -> Self {
        Self {
            grid: vec![2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30, 40, 50, 60, 80, 100, 125, 150, 175, 190],
            n_seeds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ensemble: EnsembleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
    pub budget: Budget,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_n_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "default_n_variance_samples")]
    pub n_variance_samples: usize,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default)]
    pub inference: InferenceSpec,
    #[serde(default)]
    pub baselines: BaselinesSpec,
    #[serde(default)]
    pub pilot_study: PilotStudySpec,
}

fn default_k() -> usize {
    2
}
fn default_n_steps() -> usize {
    1
}
fn default_n_trials() -> usize {
    20
}
fn default_n_variance_samples() -> usize {
    1000
}

impl ExperimentConfig {
    /// Parses a TOML document; relative paths are taken relative to `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let EnsembleSpec::Tabular { table, metadata, oracle } = &mut self.ensemble {
            fix(table);
            fix(metadata);
            if let Some(o) = oracle {
                fix(o);
            }
        }
        if let Some(o) = &mut self.out {
            fix(o);
        }
    }

    /// Checks settings that do not need the ensemble loaded.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        if self.k == 0 || self.n_steps == 0 {
            return bad("k and n_steps must be at least 1".into());
        }
        if self.n_variance_samples == 0 {
            return bad("n_variance_samples must be at least 1".into());
        }
        if self.loss.n_starts == 0 {
            return bad("loss.n_starts must be at least 1".into());
        }
        match &self.ensemble {
            EnsembleSpec::Monomial { n_models } if !(2..=5).contains(n_models) => {
                return bad(format!("monomial ensembles support 2 to 5 models, got {n_models}"))
            }
            EnsembleSpec::Tabular { table, metadata, oracle } => {
                for p in [Some(table), Some(metadata), oracle.as_ref()].into_iter().flatten() {
                    if !p.is_file() {
                        return bad(format!("{} does not exist", p.display()));
                    }
                }
            }
            _ => {}
        }
        self.loss.to_config(RngStream::new(0)).validate()?;
        Ok(())
    }
}

/// Where ensemble evaluations come from.
#[derive(Debug, Clone)]
pub enum Source {
    Monomial(usize),
    Table { values: DMatrix<f64>, path: String },
}

/// Either kind of ensemble, for callers that pick one at run time.
pub enum Ensemble {
    Monomial(mfpilot_core::MonomialEnsemble),
    Tabular(TabularEnsemble),
}

/// Runs `$body` with `$e` bound to the concrete ensemble.
#[macro_export]
macro_rules! with_ensemble {
    ($ens:expr, $e:ident => $body:expr) => {
        match $ens {
            $crate::config::Ensemble::Monomial($e) => $body,
            $crate::config::Ensemble::Tabular($e) => $body,
        }
    };
}

/// A configuration resolved against its ensemble: costs, oracle and budget.
#[derive(Debug, Clone)]
pub struct Problem {
    pub costs: CostModel,
    pub oracle: Option<CovarianceMatrix>,
    pub source: Source,
}

impl Problem {
    pub fn load(spec: &EnsembleSpec) -> CliResult<Self> {
        match spec {
            EnsembleSpec::Monomial { n_models } => {
                let e = monomial_ensemble(*n_models)?;
                Ok(Self {
                    costs: e.cost_model().clone(),
                    oracle: Some(monomial_oracle_cov(*n_models)?),
                    source: Source::Monomial(*n_models),
                })
            }
            EnsembleSpec::Tabular { table, metadata, oracle } => {
                let schema = TabularSchema::from_json_file(metadata)?;
                let t = TabularEnsemble::from_csv(table, &schema)?;
                let m = t.n_models();
                let oracle = match oracle {
                    Some(p) => {
                        let rows: Vec<Vec<f64>> = serde_json::from_reader(std::fs::File::open(p)?)?;
                        CovarianceMatrix::new(matrix_from_rows(&rows, m, "oracle")?)?
                    }
                    None => {
                        let stats = scatter_and_stats(&PilotData::new(t.values().clone(), 0.0)?)?;
                        CovarianceMatrix::new(stats.unbiased_cov())?
                    }
                };
                Ok(Self {
                    costs: t.cost_model().clone(),
                    oracle: Some(oracle),
                    source: Source::Table {
                        values: t.values().clone(),
                        path: table.display().to_string(),
                    },
                })
            }
        }
    }

    pub fn n_models(&self) -> usize {
        self.costs.n_models()
    }

    pub fn oracle(&self) -> CliResult<&CovarianceMatrix> {
        self.oracle
            .as_ref()
            .ok_or_else(|| CliError::Validation("this command needs an oracle covariance; supply ensemble.oracle".into()))
    }

    /// The ensemble for slot `slot` of `n_slots`; tables are split into disjoint blocks.
    pub fn ensemble(&self, slot: usize, n_slots: usize) -> CliResult<Ensemble> {
        match &self.source {
            Source::Monomial(m) => Ok(Ensemble::Monomial(monomial_ensemble(*m)?)),
            Source::Table { values, path } => {
                let block = values.nrows() / n_slots.max(1);
                if block == 0 {
                    return Err(CliError::Validation(format!(
                        "{path}: {} rows cannot be split across {n_slots} trials",
                        values.nrows()
                    )));
                }
                let rows = values.rows(slot * block, block).into_owned();
                Ok(Ensemble::Tabular(TabularEnsemble::from_rows(
                    rows,
                    self.costs.clone(),
                    format!("{path} [rows {}..{}]", slot * block + 1, (slot + 1) * block),
                )?))
            }
        }
    }
}

/// Seed for trial `index`, derived from the master seed.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    mfpilot_core::randmat::mix64(master ^ mfpilot_core::randmat::mix64(index as u64 + 1))
}
