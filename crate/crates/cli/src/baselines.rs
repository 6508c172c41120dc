//! Oracle baselines: plain Monte Carlo, classic MLMC and the best ACV estimator, each
//! spending the whole budget with the exact covariance.

use std::path::Path;

use mfpilot_core::{mc_variance, mlmc_allocation, optimize_allocation, AllocationFamily, CostModel, CovarianceMatrix};
use serde::{Deserialize, Serialize};

use crate::config::{Budget, ExperimentConfig, Problem};
use crate::error::CliResult;
use crate::report::{write_csv, write_json, CsvRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub budget_pilots: f64,
    pub budget: f64,
    pub estimator: String,
    pub family: String,
    pub variance: f64,
    pub vrr: f64,
    pub cost: f64,
    /// Per-model sample counts, space separated.
    pub counts: String,
}

impl CsvRow for BaselineRow {
    const COLUMNS: &'static [&'static str] =
        &["budget_pilots", "budget", "estimator", "family", "variance", "vrr", "cost", "counts"];
}

pub const MC: &str = "MC";
pub const MLMC_BEST: &str = "MLMC-BEST";
pub const ACV_BEST: &str = "ACV-BEST";

fn join(counts: &[u64]) -> String {
    counts.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
}

/// The three baselines at one budget.
pub fn baselines_at(oracle: &CovarianceMatrix, w: &CostModel, budget: f64) -> CliResult<Vec<BaselineRow>> {
    let mc = mc_variance(oracle, budget, w)?;
    let n0 = (budget / w.get(0)).floor();
    let pilots = budget / w.total();
    let row = |estimator: &str, family: String, variance: f64, cost: f64, counts: String| BaselineRow {
        budget_pilots: pilots,
        budget,
        estimator: estimator.to_string(),
        family,
        variance,
        vrr: mc / variance,
        cost,
        counts,
    };
    let mlmc = mlmc_allocation(oracle, budget, w)?;
    let acv = optimize_allocation(oracle, budget, w, &AllocationFamily::ALL)?;
    Ok(vec![
        row(MC, "mc".into(), mc, n0 * w.get(0), format!("{n0}")),
        row(
            MLMC_BEST,
            mlmc.family().to_string(),
            mlmc.predicted_variance,
            mlmc.cost,
            join(mlmc.config.allocation.counts()),
        ),
        row(
            ACV_BEST,
            acv.family().to_string(),
            acv.predicted_variance,
            acv.cost,
            join(acv.config.allocation.counts()),
        ),
    ])
}

/// Baselines at every configured budget (or the experiment budget if none are listed).
pub fn compute(cfg: &ExperimentConfig, problem: &Problem) -> CliResult<Vec<BaselineRow>> {
    let oracle = problem.oracle()?;
    let budgets: Vec<Budget> = if cfg.baselines.budgets.is_empty() {
        vec![cfg.budget]
    } else {
        cfg.baselines.budgets.clone()
    };
    let mut rows = Vec::new();
    for b in budgets {
        rows.extend(baselines_at(oracle, &problem.costs, b.resolve(&problem.costs))?);
    }
    Ok(rows)
}

/// Writes `baselines.csv` and `baselines.json` to `out`.
pub fn cmd_baselines(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<BaselineRow>> {
    cfg.validate()?;
    let problem = Problem::load(&cfg.ensemble)?;
    let rows = compute(cfg, &problem)?;
    std::fs::create_dir_all(out)?;
    write_csv(&out.join("baselines.csv"), &rows)?;
    write_json(
        &out.join("baselines.json"),
        &serde_json::json!({ "config": cfg, "baselines": rows }),
    )?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mfpilot_core::monomial_oracle_cov;

    #[test]
    fn mc_has_unit_vrr_and_acv_beats_mlmc() {
        let s = monomial_oracle_cov(4).unwrap();
        let w = CostModel::new(vec![1.0, 0.1, 0.01, 0.001]).unwrap();
        let rows = baselines_at(&s, &w, 100.0 * w.total()).unwrap();
        assert_eq!(rows[0].vrr, 1.0);
        assert!(rows[2].variance <= rows[1].variance);
        assert!(rows.iter().all(|r| r.cost <= r.budget + 1e-9));
    }
}
