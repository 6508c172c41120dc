//! Fixed pilot-count study: estimate the covariance from a given number of pilot
//! samples, optimize the estimator with what is left, and compare predicted against
//! actual variance.

use std::path::Path;

use mfpilot_core::covinfer::scatter_and_stats;
use mfpilot_core::loss::min_final_cost;
use mfpilot_core::{
    estimator_variance, optimize_allocation, CovarianceMatrix, ModelEnsemble, PilotData, RngStream,
};
use serde::{Deserialize, Serialize};

use crate::config::{trial_seed, ExperimentConfig, Problem, Source};
use crate::error::{CliError, CliResult};
use crate::report::{quantile, write_csv, write_json, CsvRow};
use crate::with_ensemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotStudyRow {
    pub seed_index: usize,
    pub seed: u64,
    pub n_pilot: usize,
    pub remaining_budget: f64,
    pub status: String,
    pub family: Option<String>,
    pub predicted_variance: Option<f64>,
    pub actual_variance: Option<f64>,
    /// Actual over predicted variance.
    pub underestimation: Option<f64>,
    pub error: Option<String>,
}

impl CsvRow for PilotStudyRow {
    const COLUMNS: &'static [&'static str] = &[
        "seed_index",
        "seed",
        "n_pilot",
        "remaining_budget",
        "status",
        "family",
        "predicted_variance",
        "actual_variance",
        "underestimation",
        "error",
    ];
}

/// Per pilot count aggregates; `n_pilot = 0` is the oracle row with no pilot cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotStudySummaryRow {
    pub n_pilot: usize,
    pub n_ok: usize,
    pub actual_mean: f64,
    pub actual_median: f64,
    pub actual_q25: f64,
    pub actual_q75: f64,
    pub predicted_median: f64,
    pub underestimation_median: f64,
}

impl CsvRow for PilotStudySummaryRow {
    const COLUMNS: &'static [&'static str] = &[
        "n_pilot",
        "n_ok",
        "actual_mean",
        "actual_median",
        "actual_q25",
        "actual_q75",
        "predicted_median",
        "underestimation_median",
    ];
}

pub struct PilotStudy {
    pub rows: Vec<PilotStudyRow>,
    pub summary: Vec<PilotStudySummaryRow>,
    pub warnings: Vec<String>,
}

fn unbiased_cov(rows: nalgebra::DMatrix<f64>) -> mfpilot_core::Result<CovarianceMatrix> {
    CovarianceMatrix::new(scatter_and_stats(&PilotData::new(rows, 0.0)?)?.unbiased_cov())
}

/// Runs the study without writing files.
pub fn study(cfg: &ExperimentConfig, problem: &Problem) -> CliResult<PilotStudy> {
    let oracle = problem.oracle()?;
    let w = &problem.costs;
    let b_tot = cfg.budget.resolve(w);
    let families = cfg.loss.family_set();
    let min_final = min_final_cost(w, &cfg.loss.to_config(RngStream::new(0)))?;
    let n_seeds = cfg.pilot_study.n_seeds;
    if n_seeds == 0 || cfg.pilot_study.grid.is_empty() {
        return Err(CliError::Validation("pilot_study needs at least one seed and one grid point".into()));
    }
    let mut warnings = Vec::new();
    let mut grid: Vec<usize> = Vec::new();
    for &n in &cfg.pilot_study.grid {
        if n < 2 {
            warnings.push(format!("pilot count {n} dropped: a sample covariance needs at least 2 samples"));
        } else if b_tot - n as f64 * w.total() < min_final {
            warnings.push(format!("pilot count {n} dropped: it leaves too little budget for an estimator"));
        } else {
            grid.push(n);
        }
    }
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(CliError::Validation("no pilot count in the grid is feasible".into()));
    }
    let n_max = *grid.last().expect("grid not empty");
    if let Source::Table { values, path } = &problem.source {
        if values.nrows() < n_max * n_seeds {
            return Err(CliError::Validation(format!(
                "{path}: {} rows are fewer than {n_seeds} seeds x {n_max} pilot samples",
                values.nrows()
            )));
        }
    }

    let mut rows = Vec::new();
    for s in 0..n_seeds {
        let seed = trial_seed(cfg.seed, s);
        for &n in &grid {
            let remaining = b_tot - n as f64 * w.total();
            let mut ensemble = problem.ensemble(s, n_seeds)?;
            let mut rng = RngStream::new(seed).substream(n as u64).rng();
            let pilot = with_ensemble!(&mut ensemble, e => e.pilot_rows(&mut rng, n));
            let outcome = pilot
                .and_then(unbiased_cov)
                .and_then(|est| optimize_allocation(&est, remaining, w, &families))
                .and_then(|r| estimator_variance(oracle, &r.config).map(|actual| (r, actual)));
            rows.push(match outcome {
                Ok((r, actual)) => PilotStudyRow {
                    seed_index: s,
                    seed,
                    n_pilot: n,
                    remaining_budget: remaining,
                    status: "ok".into(),
                    family: Some(r.family().to_string()),
                    predicted_variance: Some(r.predicted_variance),
                    actual_variance: Some(actual),
                    underestimation: Some(actual / r.predicted_variance),
                    error: None,
                },
                Err(e) => PilotStudyRow {
                    seed_index: s,
                    seed,
                    n_pilot: n,
                    remaining_budget: remaining,
                    status: "failed".into(),
                    family: None,
                    predicted_variance: None,
                    actual_variance: None,
                    underestimation: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }

    let best = optimize_allocation(oracle, b_tot, w, &families)?;
    let mut summary = vec![PilotStudySummaryRow {
        n_pilot: 0,
        n_ok: 1,
        actual_mean: best.predicted_variance,
        actual_median: best.predicted_variance,
        actual_q25: best.predicted_variance,
        actual_q75: best.predicted_variance,
        predicted_median: best.predicted_variance,
        underestimation_median: 1.0,
    }];
    for &n in &grid {
        let ok: Vec<&PilotStudyRow> = rows.iter().filter(|r| r.n_pilot == n && r.status == "ok").collect();
        let actual: Vec<f64> = ok.iter().filter_map(|r| r.actual_variance).collect();
        let predicted: Vec<f64> = ok.iter().filter_map(|r| r.predicted_variance).collect();
        let ratio: Vec<f64> = ok.iter().filter_map(|r| r.underestimation).collect();
        let q = |v: &[f64], p: f64| quantile(v, p).unwrap_or(f64::NAN);
        summary.push(PilotStudySummaryRow {
            n_pilot: n,
            n_ok: ok.len(),
            actual_mean: if actual.is_empty() { f64::NAN } else { actual.iter().sum::<f64>() / actual.len() as f64 },
            actual_median: q(&actual, 0.5),
            actual_q25: q(&actual, 0.25),
            actual_q75: q(&actual, 0.75),
            predicted_median: q(&predicted, 0.5),
            underestimation_median: q(&ratio, 0.5),
        });
    }
    Ok(PilotStudy { rows, summary, warnings })
}

/// Writes `pilot_study.csv` and `pilot_study_summary.csv` under `out`.
pub fn cmd_pilot_study(cfg: &ExperimentConfig, out: &Path) -> CliResult<PilotStudy> {
    cfg.validate()?;
    let problem = Problem::load(&cfg.ensemble)?;
    let res = study(cfg, &problem)?;
    std::fs::create_dir_all(out)?;
    write_csv(&out.join("pilot_study.csv"), &res.rows)?;
    write_csv(&out.join("pilot_study_summary.csv"), &res.summary)?;
    write_json(
        &out.join("pilot_study.json"),
        &serde_json::json!({ "config": cfg, "warnings": res.warnings }),
    )?;
    Ok(res)
}
