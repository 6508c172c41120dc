//! Bayesian inference over the model-output covariance matrix.
//!
//! Two posterior families are supported:
//!
//! * inverse Wishart, updated in closed form from the pilot scatter matrix;
//! * γ-Gaussian, where independent Gaussians sit on the γ coordinates of the
//!   correlation matrix and on the log standard deviations. The likelihood is
//!   obtained by simulating Wishart covariances around the observed biased sample
//!   covariance, mapping them to (γ, log σ), truncating outliers to a quantile box
//!   and moment matching.
//!
//! Projected posteriors pretend `n` further pilot rows arrive with the same sample
//! statistics as the observed ones.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, max_abs, min_eigenvalue, spectral_map, symmetrize};
use crate::matparam::{
    compose_cov, decompose_cov, gamma_forward, gamma_inverse, CovarianceMatrix, DEFAULT_GAMMA_TOL,
};
use crate::randmat::{iw_mean, InverseWishartParams, InverseWishartSampler, MvnSampler, RngStream, WishartSampler};

const MAX_REDRAWS: usize = 10;

/// Joint pilot evaluations: row `j` holds the outputs of all `M` models at one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotData {
    outputs: DMatrix<f64>,
    cost_per_row: f64,
}

impl PilotData {
    pub fn new(outputs: DMatrix<f64>, cost_per_row: f64) -> Result<Self> {
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("pilot outputs must be finite".into()));
        }
        if !(cost_per_row >= 0.0) {
            return Err(Error::InvalidParameters("pilot cost per row must be nonnegative".into()));
        }
        Ok(Self { outputs, cost_per_row })
    }

    pub fn empty(n_models: usize, cost_per_row: f64) -> Self {
        Self {
            outputs: DMatrix::zeros(0, n_models),
            cost_per_row,
        }
    }

    /// Appends rows (`k × M`).
    pub fn extend(&mut self, rows: &DMatrix<f64>) -> Result<()> {
        if rows.ncols() != self.n_models() {
            return Err(Error::Dimension(format!(
                "appending {} columns to pilot data with {} models",
                rows.ncols(),
                self.n_models()
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("pilot outputs must be finite".into()));
        }
        let (n, m) = (self.n_pilot(), self.n_models());
        let mut out = DMatrix::zeros(n + rows.nrows(), m);
        out.rows_mut(0, n).copy_from(&self.outputs);
        out.rows_mut(n, rows.nrows()).copy_from(rows);
        self.outputs = out;
        Ok(())
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn n_pilot(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn n_models(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn cost_per_row(&self) -> f64 {
        self.cost_per_row
    }

    pub fn total_cost(&self) -> f64 {
        self.cost_per_row * self.n_pilot() as f64
    }
}

/// Column means, biased covariance and scatter matrix of a pilot set.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    pub n: usize,
    pub mean: DVector<f64>,
    pub biased_cov: DMatrix<f64>,
    pub scatter: DMatrix<f64>,
}

impl SampleStats {
    pub fn unbiased_cov(&self) -> DMatrix<f64> {
        &self.scatter / (self.n as f64 - 1.0)
    }
}

pub fn scatter_and_stats(data: &PilotData) -> Result<SampleStats> {
    let n = data.n_pilot();
    if n < 2 {
        return Err(Error::InsufficientData { have: n, need: 2 });
    }
    let x = data.outputs();
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let scatter = symmetrize(&(centered.transpose() * &centered));
    Ok(SampleStats {
        n,
        biased_cov: &scatter / n as f64,
        mean,
        scatter,
    })
}

/// Covariance structure carried on γ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaStructure {
    /// Independent γ components (the GG variant).
    Diagonal,
    /// Full covariance on γ (the GGMVN variant).
    Full,
}

/// Independent Gaussians on γ and on log σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaGaussian {
    pub structure: GammaStructure,
    pub mean_gamma: DVector<f64>,
    pub cov_gamma: DMatrix<f64>,
    pub mean_logsigma: DVector<f64>,
    pub var_logsigma: DVector<f64>,
}

impl GammaGaussian {
    pub fn new(
        structure: GammaStructure,
        mean_gamma: DVector<f64>,
        cov_gamma: DMatrix<f64>,
        mean_logsigma: DVector<f64>,
        var_logsigma: DVector<f64>,
    ) -> Result<Self> {
        let m = mean_logsigma.len();
        let l = m * m.saturating_sub(1) / 2;
        if mean_gamma.len() != l || cov_gamma.nrows() != l || cov_gamma.ncols() != l || var_logsigma.len() != m {
            return Err(Error::Dimension(format!(
                "gamma-Gaussian blocks inconsistent with M = {m}: mean_gamma {}, cov_gamma {}x{}, var_logsigma {}",
                mean_gamma.len(),
                cov_gamma.nrows(),
                cov_gamma.ncols(),
                var_logsigma.len()
            )));
        }
        if var_logsigma.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameters("log-sigma variances must be nonnegative".into()));
        }
        let cov_gamma = match structure {
            GammaStructure::Diagonal => DMatrix::from_diagonal(&cov_gamma.diagonal()),
            GammaStructure::Full => symmetrize(&cov_gamma),
        };
        if l > 0 && min_eigenvalue(&cov_gamma) < -1e-10 * max_abs(&cov_gamma).max(1.0) {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min_eigenvalue(&cov_gamma),
            });
        }
        Ok(Self {
            structure,
            mean_gamma,
            cov_gamma,
            mean_logsigma,
            var_logsigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean_logsigma.len()
    }
}

/// Posterior (or prior) state over the covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CovPosterior {
    InverseWishart(InverseWishartParams),
    GammaGaussian(GammaGaussian),
}

impl CovPosterior {
    pub fn dim(&self) -> usize {
        match self {
            Self::InverseWishart(p) => p.dim(),
            Self::GammaGaussian(g) => g.dim(),
        }
    }

    /// Smallest pilot set the update accepts for this family.
    pub fn min_pilot(&self) -> usize {
        match self {
            Self::InverseWishart(p) => p.dim() + 1,
            // The biased covariance of M+1 rows has rank at most M; one extra row
            // keeps the Wishart likelihood away from the boundary.
            Self::GammaGaussian(g) => g.dim() + 2,
        }
    }
}

/// How simulated γ draws outside the quantile box are handled before moment matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Drop every draw with any component outside its box.
    Joint,
    /// Each variance uses the draws inside that component's box; covariances use pairs.
    #[default]
    Marginal,
    /// Clip each component to its box and keep every draw.
    Winsorize,
}

/// Settings for the γ-Gaussian likelihood construction and projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub n_sim: usize,
    pub trunc_quantiles: (f64, f64),
    pub truncation: TruncationMode,
    pub projection_pin_logsigma_mean: bool,
    pub rng: RngStream,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n_sim: 1000,
            trunc_quantiles: (0.2, 0.8),
            truncation: TruncationMode::default(),
            projection_pin_logsigma_mean: true,
            rng: RngStream::new(0),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        let (lo, hi) = self.trunc_quantiles;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::Config(format!("truncation quantiles ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")));
        }
        if self.n_sim < 10 * m * m {
            return Err(Error::Config(format!(
                "n_sim = {} is below 10 M^2 = {}",
                self.n_sim,
                10 * m * m
            )));
        }
        Ok(())
    }
}

/// Conjugate inverse-Wishart update: `H + scatter`, `ν + N`.
pub fn iw_update(prior: &InverseWishartParams, data: &PilotData) -> Result<InverseWishartParams> {
    check_dims(prior.dim(), data)?;
    let stats = scatter_and_stats(data)?;
    InverseWishartParams::new(&prior.h + &stats.scatter, prior.nu + stats.n as f64)
}

/// Moment-matched Gaussian likelihood in (γ, log σ) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaLikelihood {
    pub mean_gamma: DVector<f64>,
    pub cov_gamma: DMatrix<f64>,
    pub mean_logsigma: DVector<f64>,
    pub var_logsigma: DVector<f64>,
    pub kept: usize,
}

/// Raw simulated (γ, log σ) draws, one row per simulated covariance.
#[derive(Debug, Clone)]
pub struct SimulatedDraws {
    pub gamma: DMatrix<f64>,
    pub log_sigma: DMatrix<f64>,
}

/// Simulates `n_sim` covariances from `Wishart(ĉ / dof, dof)` and maps them to (γ, log σ).
pub fn simulate_gamma_draws(c_hat: &DMatrix<f64>, dof: f64, n_sim: usize, rng: RngStream) -> Result<SimulatedDraws> {
    let m = c_hat.nrows();
    let l = m * (m - 1) / 2;
    let sampler = WishartSampler::new(&(c_hat / dof), dof)?;
    let mut gamma = DMatrix::zeros(n_sim, l);
    let mut log_sigma = DMatrix::zeros(n_sim, m);
    let mut filled = 0;
    let mut attempts = 0u64;
    // A draw can be numerically singular when dof is close to M; those are skipped
    // deterministically on the same stream.
    let mut r = rng.rng();
    while filled < n_sim {
        attempts += 1;
        if attempts > 4 * n_sim as u64 + 100 {
            return Err(Error::InferenceDegeneracy { min_eigenvalue: min_eigenvalue(c_hat) });
        }
        let w = sampler.sample(&mut r);
        let Ok(cov) = CovarianceMatrix::new(w) else { continue };
        let Ok((sigma, corr)) = decompose_cov(&cov) else { continue };
        let Ok(g) = gamma_forward(&corr) else { continue };
        gamma.row_mut(filled).copy_from(&g.transpose());
        log_sigma.row_mut(filled).copy_from(&sigma.map(f64::ln).transpose());
        filled += 1;
    }
    Ok(SimulatedDraws { gamma, log_sigma })
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Indices of draws whose γ lies inside the componentwise quantile box.
pub fn truncation_mask(gamma: &DMatrix<f64>, quantiles: (f64, f64)) -> Vec<usize> {
    let n = gamma.nrows();
    let mut bounds = Vec::with_capacity(gamma.ncols());
    for col in gamma.column_iter() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        v.sort_by(|a, b| a.total_cmp(b));
        bounds.push((quantile_sorted(&v, quantiles.0), quantile_sorted(&v, quantiles.1)));
    }
    (0..n)
        .filter(|&i| {
            bounds
                .iter()
                .enumerate()
                .all(|(k, &(lo, hi))| gamma[(i, k)] >= lo && gamma[(i, k)] <= hi)
        })
        .collect()
}

fn mean_and_cov(x: &DMatrix<f64>, rows: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let p = x.ncols();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(p);
    for &i in rows {
        mean += x.row(i).transpose();
    }
    mean /= n;
    let mut cov = DMatrix::zeros(p, p);
    for &i in rows {
        let d = x.row(i).transpose() - &mean;
        cov += &d * d.transpose();
    }
    (mean, cov / (n - 1.0))
}

fn quantile_bounds(gamma: &DMatrix<f64>, quantiles: (f64, f64)) -> Vec<(f64, f64)> {
    gamma
        .column_iter()
        .map(|col| {
            let mut v: Vec<f64> = col.iter().copied().collect();
            v.sort_by(|a, b| a.total_cmp(b));
            (quantile_sorted(&v, quantiles.0), quantile_sorted(&v, quantiles.1))
        })
        .collect()
}

fn marginal_moments(gamma: &DMatrix<f64>, quantiles: (f64, f64), need: usize) -> (DVector<f64>, DMatrix<f64>, usize) {
    let (n, l) = gamma.shape();
    let bounds = quantile_bounds(gamma, quantiles);
    let inside = |i: usize, k: usize| gamma[(i, k)] >= bounds[k].0 && gamma[(i, k)] <= bounds[k].1;
    let fewest = (0..l).map(|k| (0..n).filter(|&i| inside(i, k)).count()).min().unwrap_or(n);
    if fewest < need {
        return (DVector::zeros(l), DMatrix::zeros(l, l), fewest);
    }
    let mut mean = DVector::zeros(l);
    let mut var = DVector::zeros(l);
    let mut min_kept = n;
    for k in 0..l {
        let rows: Vec<usize> = (0..n).filter(|&i| inside(i, k)).collect();
        min_kept = min_kept.min(rows.len());
        let (m, c) = mean_and_cov(&gamma.columns(k, 1).into_owned(), &rows);
        mean[k] = m[0];
        var[k] = c[(0, 0)];
    }
    let mut cov = DMatrix::from_diagonal(&var);
    for j in 0..l {
        for k in 0..j {
            let rows: Vec<usize> = (0..n).filter(|&i| inside(i, j) && inside(i, k)).collect();
            if rows.len() < 3 {
                continue;
            }
            let pair = DMatrix::from_fn(n, 2, |i, c| gamma[(i, if c == 0 { j } else { k })]);
            let (_, c) = mean_and_cov(&pair, &rows);
            let denom = (c[(0, 0)] * c[(1, 1)]).sqrt();
            let rho = if denom > 0.0 { (c[(0, 1)] / denom).clamp(-1.0, 1.0) } else { 0.0 };
            cov[(j, k)] = rho * (var[j] * var[k]).sqrt();
            cov[(k, j)] = cov[(j, k)];
        }
    }
    (mean, spectral_map(&cov, |v| v.max(0.0)), min_kept)
}

/// Truncates simulated draws and moment matches the Gaussian likelihood.
pub fn moment_match(
    draws: &SimulatedDraws,
    structure: GammaStructure,
    quantiles: (f64, f64),
    mode: TruncationMode,
) -> Result<GammaLikelihood> {
    let total = draws.gamma.nrows();
    let l = draws.gamma.ncols();
    let all: Vec<usize> = (0..total).collect();
    let need = match structure {
        GammaStructure::Full => l + 2,
        GammaStructure::Diagonal => 3,
    }
    .max(3);
    let check = |kept: usize| {
        if kept < need {
            Err(Error::Truncation { kept, total, need })
        } else {
            Ok(())
        }
    };
    let (mean_gamma, cov_gamma, mean_logsigma, cov_logsigma, kept) = if l == 0 {
        let (mg, cg) = mean_and_cov(&draws.gamma, &all);
        let (ms, cs) = mean_and_cov(&draws.log_sigma, &all);
        (mg, cg, ms, cs, total)
    } else {
        match mode {
            TruncationMode::Joint => {
                let kept = truncation_mask(&draws.gamma, quantiles);
                check(kept.len())?;
                let (mg, cg) = mean_and_cov(&draws.gamma, &kept);
                let (ms, cs) = mean_and_cov(&draws.log_sigma, &kept);
                (mg, cg, ms, cs, kept.len())
            }
            TruncationMode::Marginal => {
                let (mg, cg, kept) = marginal_moments(&draws.gamma, quantiles, need);
                check(kept)?;
                let (ms, cs) = mean_and_cov(&draws.log_sigma, &all);
                (mg, cg, ms, cs, kept)
            }
            TruncationMode::Winsorize => {
                let bounds = quantile_bounds(&draws.gamma, quantiles);
                let clipped = DMatrix::from_fn(total, l, |i, k| draws.gamma[(i, k)].clamp(bounds[k].0, bounds[k].1));
                let (mg, cg) = mean_and_cov(&clipped, &all);
                let (ms, cs) = mean_and_cov(&draws.log_sigma, &all);
                (mg, cg, ms, cs, total)
            }
        }
    };
    check(kept)?;
    let cov_gamma = match structure {
        GammaStructure::Full => cov_gamma,
        GammaStructure::Diagonal => DMatrix::from_diagonal(&cov_gamma.diagonal()),
    };
    Ok(GammaLikelihood {
        mean_gamma,
        cov_gamma,
        mean_logsigma,
        var_logsigma: cov_logsigma.diagonal(),
        kept,
    })
}

/// Likelihood built from the observed biased covariance with an effective sample count.
pub fn gamma_likelihood(
    c_hat: &DMatrix<f64>,
    n_effective: f64,
    structure: GammaStructure,
    cfg: &InferenceConfig,
) -> Result<GammaLikelihood> {
    let lmin = min_eigenvalue(c_hat);
    let scale = c_hat.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b));
    if !(lmin > 1e-12 * scale) || !(scale > 0.0) {
        return Err(Error::InferenceDegeneracy { min_eigenvalue: lmin });
    }
    let draws = simulate_gamma_draws(c_hat, n_effective, cfg.n_sim, cfg.rng)?;
    moment_match(&draws, structure, cfg.trunc_quantiles, cfg.truncation)
}

/// Gaussian product of a prior `N(m0, P0)` and likelihood `N(m1, P1)` (full covariances).
pub fn gaussian_product(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    lik_mean: &DVector<f64>,
    lik_cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if prior_mean.is_empty() {
        return Ok((prior_mean.clone(), prior_cov.clone()));
    }
    if max_abs(prior_cov) == 0.0 {
        return Ok((prior_mean.clone(), prior_cov.clone()));
    }
    // (P0⁻¹ + P1⁻¹)⁻¹ = P1 − P1 (P0 + P1)⁻¹ P1, which stays well conditioned when
    // either factor is nearly singular.
    let chol = cholesky_jitter(&symmetrize(&(prior_cov + lik_cov)))?;
    let k1 = chol.solve(lik_cov);
    let post_cov = spectral_map(&(lik_cov - lik_cov * &k1), |l| l.max(0.0));
    let post_mean = prior_mean + prior_cov * chol.solve(&(lik_mean - prior_mean));
    Ok((post_mean, post_cov))
}

fn diagonal_product(
    prior_mean: &DVector<f64>,
    prior_var: &DVector<f64>,
    lik_mean: &DVector<f64>,
    lik_var: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = prior_mean.len();
    let mut mean = DVector::zeros(n);
    let mut var = DVector::zeros(n);
    for i in 0..n {
        let (p0, p1) = (prior_var[i], lik_var[i].max(f64::MIN_POSITIVE));
        if p0 == 0.0 {
            mean[i] = prior_mean[i];
            var[i] = 0.0;
            continue;
        }
        let v = 1.0 / (1.0 / p0 + 1.0 / p1);
        mean[i] = v * (lik_mean[i] / p1 + prior_mean[i] / p0);
        var[i] = v;
    }
    (mean, var)
}

/// Closed-form Gaussian posterior from a γ-Gaussian prior and a moment-matched likelihood.
pub fn conjugate_update(prior: &GammaGaussian, lik: &GammaLikelihood) -> Result<GammaGaussian> {
    let (mean_gamma, cov_gamma) = match prior.structure {
        GammaStructure::Full => gaussian_product(&prior.mean_gamma, &prior.cov_gamma, &lik.mean_gamma, &lik.cov_gamma)?,
        GammaStructure::Diagonal => {
            let (m, v) = diagonal_product(
                &prior.mean_gamma,
                &prior.cov_gamma.diagonal(),
                &lik.mean_gamma,
                &lik.cov_gamma.diagonal(),
            );
            (m, DMatrix::from_diagonal(&v))
        }
    };
    let (mean_logsigma, var_logsigma) =
        diagonal_product(&prior.mean_logsigma, &prior.var_logsigma, &lik.mean_logsigma, &lik.var_logsigma);
    GammaGaussian::new(prior.structure, mean_gamma, cov_gamma, mean_logsigma, var_logsigma)
}

fn check_dims(m: usize, data: &PilotData) -> Result<()> {
    if data.n_models() != m {
        return Err(Error::Dimension(format!(
            "prior is over {m} models but pilot data has {} columns",
            data.n_models()
        )));
    }
    Ok(())
}

/// γ-Gaussian update from pilot data.
pub fn gamma_update(prior: &GammaGaussian, data: &PilotData, cfg: &InferenceConfig) -> Result<GammaGaussian> {
    check_dims(prior.dim(), data)?;
    let need = prior.dim() + 1;
    if data.n_pilot() < need {
        return Err(Error::InsufficientData {
            have: data.n_pilot(),
            need,
        });
    }
    cfg.validate(prior.dim())?;
    let stats = scatter_and_stats(data)?;
    let lik = gamma_likelihood(&stats.biased_cov, stats.n as f64, prior.structure, cfg)?;
    conjugate_update(prior, &lik)
}

/// Posterior given a prior of either family.
pub fn bayes_update(prior: &CovPosterior, data: &PilotData, cfg: &InferenceConfig) -> Result<CovPosterior> {
    match prior {
        CovPosterior::InverseWishart(p) => Ok(CovPosterior::InverseWishart(iw_update(p, data)?)),
        CovPosterior::GammaGaussian(g) => Ok(CovPosterior::GammaGaussian(gamma_update(g, data, cfg)?)),
    }
}

/// Prepared sampler for repeated posterior draws.
#[derive(Debug, Clone)]
pub enum PosteriorSampler {
    InverseWishart(InverseWishartSampler),
    GammaGaussian { gamma: MvnSampler, log_sigma: MvnSampler },
}

impl PosteriorSampler {
    pub fn new(post: &CovPosterior) -> Result<Self> {
        Ok(match post {
            CovPosterior::InverseWishart(p) => Self::InverseWishart(InverseWishartSampler::new(p)?),
            CovPosterior::GammaGaussian(g) => Self::GammaGaussian {
                gamma: MvnSampler::new(g.mean_gamma.clone(), &g.cov_gamma)?,
                log_sigma: MvnSampler::diagonal(g.mean_logsigma.clone(), &g.var_logsigma)?,
            },
        })
    }

    /// Draw number `slot`, using its own substream so the result does not depend on
    /// the order in which slots are filled.
    pub fn draw(&self, stream: RngStream, slot: usize) -> Result<CovarianceMatrix> {
        let mut rng = stream.substream(slot as u64).rng();
        let mut last = None;
        for _ in 0..MAX_REDRAWS {
            let res = match self {
                Self::InverseWishart(s) => s.sample(&mut rng).and_then(CovarianceMatrix::new),
                Self::GammaGaussian { gamma, log_sigma } => {
                    let g = gamma.sample(&mut rng);
                    let ls = log_sigma.sample(&mut rng);
                    gamma_inverse(&g, DEFAULT_GAMMA_TOL).and_then(|r| compose_cov(&ls.map(f64::exp), &r))
                }
            };
            match res {
                Ok(s) => return Ok(s),
                Err(e) => last = Some(e),
            }
        }
        Err(Error::PosteriorSampling {
            slot,
            attempts: MAX_REDRAWS,
            source: Box::new(last.expect("at least one attempt")),
        })
    }
}

/// `n` independent posterior draws.
pub fn posterior_sample(post: &CovPosterior, n: usize, stream: RngStream) -> Result<Vec<CovarianceMatrix>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let sampler = PosteriorSampler::new(post)?;
    (0..n).map(|i| sampler.draw(stream, i)).collect()
}

/// Posterior mean for inverse Wishart; `D(σ̄) Γ⁻¹(γ̄) D(σ̄)` for γ-Gaussian with
/// `σ̄ = exp(mean log σ)`.
pub fn posterior_point_estimate(post: &CovPosterior) -> Result<CovarianceMatrix> {
    match post {
        CovPosterior::InverseWishart(p) => iw_mean(p),
        CovPosterior::GammaGaussian(g) => {
            let r = gamma_inverse(&g.mean_gamma, DEFAULT_GAMMA_TOL)?;
            compose_cov(&g.mean_logsigma.map(f64::exp), &r)
        }
    }
}

/// Posterior anticipated after `n_additional` further pilot rows sharing the observed
/// sample statistics. `prior` and `data` must be the inputs that produced `post`.
pub fn project_posterior(
    prior: &CovPosterior,
    post: &CovPosterior,
    data: &PilotData,
    n_additional: usize,
    cfg: &InferenceConfig,
) -> Result<CovPosterior> {
    if n_additional == 0 {
        return Ok(post.clone());
    }
    let stats = scatter_and_stats(data)?;
    let n = stats.n as f64;
    let n_proj = n + n_additional as f64;
    match (prior, post) {
        (CovPosterior::InverseWishart(p0), CovPosterior::InverseWishart(_)) => {
            check_dims(p0.dim(), data)?;
            let h = &p0.h + &stats.scatter * (n_proj / n);
            Ok(CovPosterior::InverseWishart(InverseWishartParams::new(h, p0.nu + n_proj)?))
        }
        (CovPosterior::GammaGaussian(g0), CovPosterior::GammaGaussian(current)) => {
            check_dims(g0.dim(), data)?;
            cfg.validate(g0.dim())?;
            let lik = gamma_likelihood(&stats.biased_cov, n_proj, g0.structure, cfg)?;
            let mut projected = conjugate_update(g0, &lik)?;
            if cfg.projection_pin_logsigma_mean {
                projected.mean_logsigma = current.mean_logsigma.clone();
            }
            Ok(CovPosterior::GammaGaussian(projected))
        }
        _ => Err(Error::Config("prior and posterior belong to different families".into())),
    }
}
