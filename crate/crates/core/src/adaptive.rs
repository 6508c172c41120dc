//! Adaptive pilot sampling: keep drawing pilot batches while the projected expected
//! loss is still expected to fall, then spend the rest of the budget on the ACV
//! estimator optimized under the posterior point estimate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::acv::{evaluate_acv, estimator_variance, optimize_allocation_with, EstimatorConfig};
use crate::covinfer::{
    bayes_update, posterior_point_estimate, CovPosterior, InferenceConfig, PilotData, PosteriorSampler,
};
use crate::error::{Error, Result};
use crate::loss::{calibrate_nmc, expected_loss, min_final_cost, projected_expected_loss, LossConfig, LossReport};
use crate::matparam::CovarianceMatrix;
use crate::models::ModelEnsemble;
use crate::randmat::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub b_tot: f64,
    pub k: usize,
    pub n_steps: usize,
    pub prior: CovPosterior,
    pub loss_cfg: LossConfig,
    pub infer_cfg: InferenceConfig,
    pub rng: RngStream,
    /// Posterior-predictive variance samples returned with the result.
    pub n_variance_samples: usize,
}

impl AdaptiveConfig {
    pub fn new(b_tot: f64, prior: CovPosterior, rng: RngStream) -> Self {
        Self {
            b_tot,
            k: 2,
            n_steps: 1,
            prior,
            loss_cfg: LossConfig {
                seed: rng.fork("loss"),
                ..LossConfig::default()
            },
            infer_cfg: InferenceConfig {
                rng: rng.fork("inference"),
                ..InferenceConfig::default()
            },
            rng,
            n_variance_samples: 1000,
        }
    }

    pub fn validate(&self, w_total: f64) -> Result<()> {
        if self.k == 0 || self.n_steps == 0 {
            return Err(Error::Config("k and n_steps must be at least 1".into()));
        }
        self.loss_cfg.validate()?;
        self.infer_cfg.validate(self.prior.dim())?;
        let init = self.prior.min_pilot() as f64 * w_total;
        if !(self.b_tot > init) {
            return Err(Error::Config(format!(
                "budget {} cannot fund the initial pilot batch costing {init}",
                self.b_tot
            )));
        }
        Ok(())
    }
}

/// One pass of the termination check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_pilot: usize,
    pub remaining_budget: f64,
    pub loss: LossReport,
    pub projected: Vec<LossReport>,
    pub n_mc: usize,
    pub nmc_capped: bool,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The current loss is below every projected loss.
    LossMinimum,
    /// Another batch would leave too little budget for a final estimator.
    BudgetLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveResult {
    pub q_tilde: f64,
    pub n_pilot_star: usize,
    pub variance_samples: Vec<f64>,
    pub iteration_trace: Vec<IterationRecord>,
    pub final_config: EstimatorConfig,
    /// Final estimator variance predicted under the point estimate.
    pub predicted_variance: f64,
    pub sigma_prime: CovarianceMatrix,
    pub posterior: CovPosterior,
    pub pilot_cost: f64,
    pub realized_cost: f64,
}

/// Draws `n` posterior covariances and returns the variance of `zeta` under each.
pub fn predictive_variance_samples(post: &CovPosterior, zeta: &EstimatorConfig, n: usize, rng: RngStream) -> Result<Vec<f64>> {
    let sampler = PosteriorSampler::new(post)?;
    (0..n)
        .map(|i| sampler.draw(rng, i).and_then(|s| estimator_variance(&s, zeta)))
        .collect()
}

pub fn run_adaptive<E: ModelEnsemble + ?Sized>(ensemble: &mut E, cfg: &AdaptiveConfig) -> Result<AdaptiveResult> {
    run_adaptive_with_progress(ensemble, cfg, &mut |_| {})
}

/// As [`run_adaptive`], calling `progress` after every iteration.
pub fn run_adaptive_with_progress<E: ModelEnsemble + ?Sized>(
    ensemble: &mut E,
    cfg: &AdaptiveConfig,
    progress: &mut dyn FnMut(&IterationRecord),
) -> Result<AdaptiveResult> {
    let w = ensemble.cost_model().clone();
    if ensemble.n_models() < 2 || ensemble.n_models() != cfg.prior.dim() {
        return Err(Error::Dimension(format!(
            "ensemble has {} models, prior {}; at least 2 required",
            ensemble.n_models(),
            cfg.prior.dim()
        )));
    }
    cfg.validate(w.total())?;
    let min_final = min_final_cost(&w, &cfg.loss_cfg)?;
    let pilot_stream = cfg.rng.fork("pilot");
    let mut trace: Vec<IterationRecord> = Vec::new();
    let fail = |trace: &Vec<IterationRecord>, e: Error| Error::Adaptive {
        iterations: trace.len(),
        trace: Box::new(trace.clone()),
        source: Box::new(e),
    };

    let mut data = PilotData::empty(w.n_models(), w.total());
    let mut loss_cfg = cfg.loss_cfg.clone();
    let mut iteration = 0usize;
    let (post, sigma_prime, b_prime) = loop {
        let n_new = if iteration == 0 { cfg.prior.min_pilot() } else { cfg.k };
        let rows = ensemble
            .pilot_rows(&mut pilot_stream.substream(iteration as u64).rng(), n_new)
            .map_err(|e| fail(&trace, e))?;
        data.extend(&rows).map_err(|e| fail(&trace, e))?;
        let b_prime = cfg.b_tot - data.total_cost();
        if b_prime < min_final {
            return Err(fail(
                &trace,
                Error::BudgetInfeasible {
                    budget: b_prime,
                    min_budget: min_final,
                    family: loss_cfg.fixed_family.unwrap_or(loss_cfg.families[0]),
                },
            ));
        }
        let infer = InferenceConfig {
            rng: cfg.infer_cfg.rng.substream(iteration as u64),
            ..cfg.infer_cfg.clone()
        };
        let step = || -> Result<_> {
            let post = bayes_update(&cfg.prior, &data, &infer)?;
            let sigma_prime = posterior_point_estimate(&post)?;
            Ok((post, sigma_prime))
        };
        let (post, sigma_prime) = step().map_err(|e| fail(&trace, e))?;
        let evaluate = |lc: &LossConfig| -> Result<(LossReport, Vec<LossReport>)> {
            let loss = expected_loss(&sigma_prime, b_prime, &post, cfg.b_tot, &w, lc)?;
            let projected = (1..=cfg.n_steps)
                .map(|i| projected_expected_loss(&sigma_prime, cfg.k * i, &data, &cfg.prior, &post, cfg.b_tot, &w, lc, &infer))
                .collect::<Result<Vec<_>>>()?;
            Ok((loss, projected))
        };
        let (mut loss, mut projected) = evaluate(&loss_cfg).map_err(|e| fail(&trace, e))?;
        let mut capped = false;
        if loss_cfg.adaptive_nmc {
            let cal = calibrate_nmc(&loss, &projected, &loss_cfg);
            capped = cal.capped;
            if cal.n_mc != loss_cfg.n_mc {
                loss_cfg.n_mc = cal.n_mc;
                (loss, projected) = evaluate(&loss_cfg).map_err(|e| fail(&trace, e))?;
            }
        }
        let at_minimum = projected.iter().all(|p| loss.total < p.ordering_value());
        let stop = if at_minimum {
            Some(StopReason::LossMinimum)
        } else if b_prime - cfg.k as f64 * w.total() < min_final {
            Some(StopReason::BudgetLimit)
        } else {
            None
        };
        let record = IterationRecord {
            iteration,
            n_pilot: data.n_pilot(),
            remaining_budget: b_prime,
            loss,
            projected,
            n_mc: loss_cfg.n_mc,
            nmc_capped: capped,
            stop,
        };
        progress(&record);
        trace.push(record);
        if stop.is_some() {
            break (post, sigma_prime, b_prime);
        }
        iteration += 1;
    };

    let mut finish = || -> Result<AdaptiveResult> {
        let families = match loss_cfg.fixed_family {
            Some(f) => vec![f],
            None => loss_cfg.families.clone(),
        };
        let best = optimize_allocation_with(&sigma_prime, b_prime, &w, &families, &loss_cfg.optimizer, &[])?;
        let eval = evaluate_acv(ensemble, &best.config, cfg.rng.fork("final"))?;
        let variance_samples =
            predictive_variance_samples(&post, &best.config, cfg.n_variance_samples, cfg.rng.fork("predictive"))?;
        let pilot_cost = data.total_cost();
        Ok(AdaptiveResult {
            q_tilde: eval.estimate,
            n_pilot_star: data.n_pilot(),
            variance_samples,
            iteration_trace: trace.clone(),
            final_config: best.config,
            predicted_variance: best.predicted_variance,
            sigma_prime: sigma_prime.clone(),
            posterior: post.clone(),
            pilot_cost,
            realized_cost: pilot_cost + eval.realized_cost,
        })
    };
    finish().map_err(|e| fail(&trace, e))
}

/// Joint pilot rows as a matrix, for callers that run inference outside the loop.
pub fn draw_pilot<E: ModelEnsemble + ?Sized>(ensemble: &mut E, n: usize, rng: RngStream) -> Result<DMatrix<f64>> {
    ensemble.pilot_rows(&mut rng.rng(), n)
}
