//! Loss of running ACV with an estimated covariance on a reduced budget.
//!
//! With `ζ_{Σ,B}` the estimator optimized under covariance `Σ` at budget `B` and
//! `V(ζ | Σ_or)` its variance under the true covariance:
//!
//! * accuracy loss `V(ζ_{Σ',B'} | Σ_or) − V(ζ_{Σ_or,B'} | Σ_or)`
//! * cost loss `V(ζ_{Σ_or,B'} | Σ_or) − V(ζ_{Σ_or,B_tot} | Σ_or)`
//!
//! and the total is their sum. Expectations replace `Σ_or` by posterior draws.

use serde::{Deserialize, Serialize};

use crate::acv::{
    allocate_at, continuous_optimum, estimator_variance, optimize_allocation_with, AllocationFamily,
    AllocationResult, CostModel, GroupLayout, OptimizerConfig,
};
use crate::covinfer::{project_posterior, CovPosterior, InferenceConfig, PilotData, PosteriorSampler};
use crate::error::{Error, Result};
use crate::matparam::CovarianceMatrix;
use crate::randmat::RngStream;

/// Largest growth factor `calibrate_nmc` may apply.
pub const NMC_CAP_FACTOR: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub n_mc: usize,
    pub seed: RngStream,
    pub fixed_family: Option<AllocationFamily>,
    pub families: Vec<AllocationFamily>,
    pub adaptive_nmc: bool,
    pub target_resolution_ratio: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            n_mc: 500,
            seed: RngStream::new(0),
            fixed_family: None,
            families: AllocationFamily::ALL.to_vec(),
            adaptive_nmc: false,
            target_resolution_ratio: 0.1,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc < 50 {
            return Err(Error::Config(format!("n_mc = {} must be at least 50", self.n_mc)));
        }
        if self.families.is_empty() && self.fixed_family.is_none() {
            return Err(Error::Config("no allocation family selected".into()));
        }
        if !(self.target_resolution_ratio > 0.0) {
            return Err(Error::Config("target_resolution_ratio must be positive".into()));
        }
        Ok(())
    }

    fn family_set(&self) -> Vec<AllocationFamily> {
        match self.fixed_family {
            Some(f) => vec![f],
            None => self.families.clone(),
        }
    }
}

/// Loss components for one covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub accuracy: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub accuracy: f64,
    pub cost: f64,
    pub mc_std_error: f64,
    pub n_mc: usize,
    pub family_used: Option<AllocationFamily>,
    /// Remaining budget the report was evaluated at.
    pub budget: f64,
    /// No feasible estimator remains; ordered above every finite loss.
    pub budget_exhausted: bool,
}

impl LossReport {
    pub fn exhausted(budget: f64, n_mc: usize) -> Self {
        Self {
            total: f64::INFINITY,
            accuracy: f64::NAN,
            cost: f64::NAN,
            mc_std_error: 0.0,
            n_mc,
            family_used: None,
            budget,
            budget_exhausted: true,
        }
    }

    /// Value used for comparisons between reports.
    pub fn ordering_value(&self) -> f64 {
        if self.budget_exhausted {
            f64::INFINITY
        } else {
            self.total
        }
    }
}

/// Components for one draw, given the estimator already optimized under `Σ'`.
fn components_for(
    zeta_prime: &AllocationResult,
    b_prime: f64,
    sigma_or: &CovarianceMatrix,
    b_tot: f64,
    w: &CostModel,
    cfg: &OptimizerConfig,
    warm: Option<&[f64]>,
) -> Result<LossComponents> {
    let family = zeta_prime.family();
    let opt = continuous_optimum(sigma_or, w, family, cfg, warm)?;
    let at_prime = allocate_at(sigma_or, w, &opt, b_prime, std::slice::from_ref(&zeta_prime.config.allocation), cfg)?;
    let at_tot = allocate_at(sigma_or, w, &opt, b_tot, std::slice::from_ref(&at_prime.config.allocation), cfg)?;
    let actual = estimator_variance(sigma_or, &zeta_prime.config)?;
    let accuracy = actual - at_prime.predicted_variance;
    let cost = at_prime.predicted_variance - at_tot.predicted_variance;
    Ok(LossComponents {
        total: accuracy + cost,
        accuracy,
        cost,
    })
}

fn check_budgets(b_prime: f64, b_tot: f64) -> Result<()> {
    if !(b_prime > 0.0 && b_prime <= b_tot) {
        return Err(Error::InvalidParameters(format!(
            "budgets must satisfy 0 < B' <= B_tot, got B' = {b_prime}, B_tot = {b_tot}"
        )));
    }
    Ok(())
}

/// Loss of optimizing under `Σ'` at `B'` when the truth is `Σ_or` with budget `B_tot`.
pub fn loss_single(
    sigma_prime: &CovarianceMatrix,
    b_prime: f64,
    sigma_or: &CovarianceMatrix,
    b_tot: f64,
    w: &CostModel,
    family: Option<AllocationFamily>,
) -> Result<LossComponents> {
    check_budgets(b_prime, b_tot)?;
    let cfg = OptimizerConfig::default();
    let families = family.map_or_else(|| AllocationFamily::ALL.to_vec(), |f| vec![f]);
    let zeta = optimize_allocation_with(sigma_prime, b_prime, w, &families, &cfg, &[])?;
    components_for(&zeta, b_prime, sigma_or, b_tot, w, &cfg, None)
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// Posterior expectation of the loss at `(Σ', B')`.
pub fn expected_loss(
    sigma_prime: &CovarianceMatrix,
    b_prime: f64,
    post: &CovPosterior,
    b_tot: f64,
    w: &CostModel,
    cfg: &LossConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    check_budgets(b_prime, b_tot)?;
    let zeta = optimize_allocation_with(sigma_prime, b_prime, w, &cfg.family_set(), &cfg.optimizer, &[])?;
    let family = zeta.family();
    let warm = continuous_optimum(sigma_prime, w, family, &cfg.optimizer, None)?;
    let sampler = PosteriorSampler::new(post)?;
    let (mut tot, mut acc, mut cst, mut sq) = (Sum::default(), Sum::default(), Sum::default(), Sum::default());
    for i in 0..cfg.n_mc {
        let draw = sampler.draw(cfg.seed, i)?;
        let c = components_for(&zeta, b_prime, &draw, b_tot, w, &cfg.optimizer, Some(&warm.log_ratios))?;
        tot.add(c.total);
        acc.add(c.accuracy);
        cst.add(c.cost);
        sq.add(c.total * c.total);
    }
    let n = cfg.n_mc as f64;
    let mean = tot.value() / n;
    let var = ((sq.value() - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(LossReport {
        total: mean,
        accuracy: acc.value() / n,
        cost: cst.value() / n,
        mc_std_error: (var / n).sqrt(),
        n_mc: cfg.n_mc,
        family_used: Some(family),
        budget: b_prime,
        budget_exhausted: false,
    })
}

/// Smallest final-estimator cost over the admissible families.
pub fn min_final_cost(w: &CostModel, cfg: &LossConfig) -> Result<f64> {
    let mut best = f64::INFINITY;
    for f in cfg.family_set() {
        best = best.min(GroupLayout::new(f, w.n_models())?.min_cost(w));
    }
    Ok(best)
}

/// Expected loss after `n_additional` more pilot rows, evaluated at the budget those
/// rows would leave and under the projected posterior.
#[allow(clippy::too_many_arguments)]
pub fn projected_expected_loss(
    sigma_prime: &CovarianceMatrix,
    n_additional: usize,
    data: &PilotData,
    prior: &CovPosterior,
    post: &CovPosterior,
    b_tot: f64,
    w: &CostModel,
    cfg: &LossConfig,
    infer_cfg: &InferenceConfig,
) -> Result<LossReport> {
    if n_additional == 0 {
        return Err(Error::InvalidParameters("projection needs at least one additional row".into()));
    }
    let b_n = b_tot - (data.n_pilot() + n_additional) as f64 * w.total();
    if !(b_n > 0.0) || b_n < min_final_cost(w, cfg)? {
        return Ok(LossReport::exhausted(b_n, cfg.n_mc));
    }
    let projected = project_posterior(prior, post, data, n_additional, infer_cfg)?;
    expected_loss(sigma_prime, b_n, &projected, b_tot, w, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NmcCalibration {
    pub n_mc: usize,
    pub capped: bool,
}

/// Grows `n_mc` by doubling until the predicted standard error resolves the smallest
/// nonzero gap between the current loss and the projected losses.
pub fn calibrate_nmc(current: &LossReport, candidates: &[LossReport], cfg: &LossConfig) -> NmcCalibration {
    let base = current.n_mc.max(1);
    let min_gap = candidates
        .iter()
        .filter(|c| !c.budget_exhausted)
        .map(|c| (current.total - c.total).abs())
        .filter(|d| *d > 0.0 && d.is_finite())
        .fold(f64::INFINITY, f64::min);
    let err = current.mc_std_error;
    if !min_gap.is_finite() || current.budget_exhausted || !(err > 0.0) {
        return NmcCalibration { n_mc: base, capped: false };
    }
    let target = cfg.target_resolution_ratio * min_gap;
    let cap = cfg.n_mc.max(1) * NMC_CAP_FACTOR;
    let mut n = base;
    while err * (base as f64 / n as f64).sqrt() > target {
        if n * 2 > cap {
            return NmcCalibration { n_mc: cap, capped: true };
        }
        n *= 2;
    }
    NmcCalibration { n_mc: n, capped: false }
}
