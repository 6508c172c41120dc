use serde::{Deserialize, Serialize};

use super::EstimatorConfig;
use crate::error::{Error, Result};
use crate::models::ModelEnsemble;
use crate::randmat::RngStream;

/// One realization of the ACV estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcvEvaluation {
    pub estimate: f64,
    pub realized_cost: f64,
    /// Model evaluations performed, per model.
    pub evaluations: Vec<u64>,
}

/// Draws fresh group samples and forms `Q̂_0(z_0) + Σ α_m (Q̂_m(z*_m) − Q̂_m(z_m))`.
pub fn evaluate_acv<E: ModelEnsemble + ?Sized>(
    ensemble: &mut E,
    zeta: &EstimatorConfig,
    rng: RngStream,
) -> Result<AcvEvaluation> {
    let a = &zeta.allocation;
    let m = a.n_models();
    if ensemble.n_models() != m {
        return Err(Error::Dimension(format!(
            "ensemble has {} models, estimator {m}",
            ensemble.n_models()
        )));
    }
    let layout = a.layout();
    let sizes = a.group_sizes();
    let mut r = rng.rng();
    let mut groups = Vec::with_capacity(sizes.len());
    for &n in &sizes {
        groups.push(ensemble.sample_inputs(&mut r, n as usize)?);
    }
    // sums[m][g]: sum of model m over group g, filled only where evaluated.
    let mut sums = vec![vec![0.0; sizes.len()]; m];
    let mut evaluations = vec![0u64; m];
    for model in 0..m {
        let mask = layout.evaluation_mask(model);
        let mut offset = 0;
        for g in 0..sizes.len() {
            if mask & (1 << g) != 0 {
                let y = ensemble.evaluate(model, &groups[g])?;
                for (i, v) in y.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::Evaluation {
                            model,
                            sample: offset + i,
                            reason: format!("non-finite output {v}"),
                        });
                    }
                }
                sums[model][g] = y.iter().sum();
                evaluations[model] += sizes[g];
            }
            offset += sizes[g] as usize;
        }
    }
    let mean_over = |model: usize, mask: u64| -> f64 {
        let (mut s, mut n) = (0.0, 0u64);
        for g in 0..sizes.len() {
            if mask & (1 << g) != 0 {
                s += sums[model][g];
                n += sizes[g];
            }
        }
        s / n as f64
    };
    let mut estimate = mean_over(0, layout.z0());
    for k in 1..m {
        estimate += zeta.alpha[k - 1] * (mean_over(k, layout.zstar(k)) - mean_over(k, layout.z(k)));
    }
    let w = ensemble.cost_model();
    let realized_cost = evaluations.iter().enumerate().map(|(k, &n)| w.get(k) * n as f64).sum();
    Ok(AcvEvaluation {
        estimate,
        realized_cost,
        evaluations,
    })
}
