//! Repeated adaptive trials with per-trial seeds, reports and iteration traces.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mfpilot_core::adaptive::{run_adaptive_with_progress, StopReason};
use mfpilot_core::{estimator_variance, mc_variance, AdaptiveConfig, CovPosterior, Error, IterationRecord, RngStream};
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineRow};
use crate::config::{trial_seed, ExperimentConfig, Problem};
use crate::error::{CliError, CliResult};
use crate::report::{quantile, write_csv, write_json, CsvRow, Stats};
use crate::with_ensemble;

/// One trial's outcome. Numeric fields are empty when the trial failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    pub n_pilot_star: Option<usize>,
    pub iterations: usize,
    pub stop: Option<String>,
    pub family: Option<String>,
    /// Final estimator variance predicted under the posterior point estimate.
    pub predicted_variance: Option<f64>,
    /// Final estimator variance under the oracle covariance.
    pub oracle_variance: Option<f64>,
    pub vrr: Option<f64>,
    pub pilot_cost: Option<f64>,
    pub realized_cost: Option<f64>,
    pub estimate: Option<f64>,
    pub predictive_q25: Option<f64>,
    pub predictive_median: Option<f64>,
    pub predictive_q75: Option<f64>,
    pub error: Option<String>,
}

impl CsvRow for TrialReport {
    const COLUMNS: &'static [&'static str] = &[
        "trial",
        "seed",
        "status",
        "n_pilot_star",
        "iterations",
        "stop",
        "family",
        "predicted_variance",
        "oracle_variance",
        "vrr",
        "pilot_cost",
        "realized_cost",
        "estimate",
        "predictive_q25",
        "predictive_median",
        "predictive_q75",
        "error",
    ];
}

/// One row per iteration and horizon; horizon 0 is the current loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub n_pilot: usize,
    pub remaining_budget: f64,
    pub horizon: usize,
    pub total: f64,
    pub accuracy: f64,
    pub cost: f64,
    pub mc_std_error: f64,
    pub n_mc: usize,
    pub family: Option<String>,
    pub budget_exhausted: bool,
    pub stop: Option<String>,
}

impl CsvRow for TraceRow {
    const COLUMNS: &'static [&'static str] = &[
        "iteration",
        "n_pilot",
        "remaining_budget",
        "horizon",
        "total",
        "accuracy",
        "cost",
        "mc_std_error",
        "n_mc",
        "family",
        "budget_exhausted",
        "stop",
    ];
}

fn stop_name(s: StopReason) -> String {
    match s {
        StopReason::LossMinimum => "loss_minimum",
        StopReason::BudgetLimit => "budget_limit",
    }
    .to_string()
}

pub fn trace_rows(trace: &[IterationRecord]) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for rec in trace {
        for (h, l) in std::iter::once(&rec.loss).chain(rec.projected.iter()).enumerate() {
            rows.push(TraceRow {
                iteration: rec.iteration,
                n_pilot: rec.n_pilot,
                remaining_budget: rec.remaining_budget,
                horizon: h,
                total: l.total,
                accuracy: l.accuracy,
                cost: l.cost,
                mc_std_error: l.mc_std_error,
                n_mc: l.n_mc,
                family: l.family_used.map(|f| f.to_string()),
                budget_exhausted: l.budget_exhausted,
                stop: if h == 0 { rec.stop.map(stop_name) } else { None },
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub budget: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub mc_variance: f64,
    pub n_pilot_star: Option<Stats>,
    pub oracle_variance: Option<Stats>,
    pub vrr: Option<Stats>,
    pub baselines: Vec<BaselineRow>,
}

/// A finished trial with its iteration trace.
pub struct TrialOutcome {
    pub report: TrialReport,
    pub trace: Vec<IterationRecord>,
}

#[derive(Serialize)]
struct ProgressLine<'a> {
    trial: usize,
    iteration: usize,
    n_pilot: usize,
    remaining_budget: f64,
    loss: f64,
    projected: Vec<f64>,
    stop: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub type ProgressSink = Mutex<Option<BufWriter<File>>>;

fn log_progress(sink: &ProgressSink, line: &ProgressLine) {
    if let Ok(mut guard) = sink.lock() {
        if let Some(f) = guard.as_mut() {
            if serde_json::to_writer(&mut *f, line).is_ok() {
                let _ = writeln!(f);
                let _ = f.flush();
            }
        }
    }
}

/// Runs trial `index` to completion; failures are recorded in the report.
pub fn run_trial(
    cfg: &ExperimentConfig,
    problem: &Problem,
    prior: &CovPosterior,
    index: usize,
    progress: &ProgressSink,
) -> TrialOutcome {
    let seed = trial_seed(cfg.seed, index);
    let b_tot = cfg.budget.resolve(&problem.costs);
    let mut report = TrialReport {
        trial: index,
        seed,
        status: "failed".into(),
        n_pilot_star: None,
        iterations: 0,
        stop: None,
        family: None,
        predicted_variance: None,
        oracle_variance: None,
        vrr: None,
        pilot_cost: None,
        realized_cost: None,
        estimate: None,
        predictive_q25: None,
        predictive_median: None,
        predictive_q75: None,
        error: None,
    };
    let rng = RngStream::new(seed);
    let mut acfg = AdaptiveConfig::new(b_tot, prior.clone(), rng);
    acfg.k = cfg.k;
    acfg.n_steps = cfg.n_steps;
    acfg.n_variance_samples = cfg.n_variance_samples;
    acfg.loss_cfg = cfg.loss.to_config(acfg.loss_cfg.seed);
    acfg.infer_cfg = cfg.inference.to_config(acfg.infer_cfg.rng);

    let ensemble = match problem.ensemble(index, cfg.n_trials) {
        Ok(e) => e,
        Err(e) => {
            report.error = Some(e.to_string());
            return TrialOutcome { report, trace: Vec::new() };
        }
    };
    let mut on_iter = |rec: &IterationRecord| {
        log_progress(
            progress,
            &ProgressLine {
                trial: index,
                iteration: rec.iteration,
                n_pilot: rec.n_pilot,
                remaining_budget: rec.remaining_budget,
                loss: rec.loss.total,
                projected: rec.projected.iter().map(|p| p.total).collect(),
                stop: rec.stop.map(stop_name),
                error: None,
            },
        )
    };
    let result = with_ensemble!(ensemble, e => {
        let mut e = e;
        run_adaptive_with_progress(&mut e, &acfg, &mut on_iter)
    });
    match result {
        Ok(r) => {
            let last = r.iteration_trace.last();
            report.status = "ok".into();
            report.n_pilot_star = Some(r.n_pilot_star);
            report.iterations = r.iteration_trace.len();
            report.stop = last.and_then(|l| l.stop).map(stop_name);
            report.family = Some(r.final_config.family().to_string());
            report.predicted_variance = Some(r.predicted_variance);
            report.pilot_cost = Some(r.pilot_cost);
            report.realized_cost = Some(r.realized_cost);
            report.estimate = Some(r.q_tilde);
            report.predictive_q25 = quantile(&r.variance_samples, 0.25);
            report.predictive_median = quantile(&r.variance_samples, 0.5);
            report.predictive_q75 = quantile(&r.variance_samples, 0.75);
            if let Some(oracle) = &problem.oracle {
                match (estimator_variance(oracle, &r.final_config), mc_variance(oracle, b_tot, &problem.costs)) {
                    (Ok(v), Ok(mc)) => {
                        report.oracle_variance = Some(v);
                        report.vrr = Some(mc / v);
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        report.status = "failed".into();
                        report.error = Some(e.to_string());
                    }
                }
            }
            TrialOutcome {
                report,
                trace: r.iteration_trace,
            }
        }
        Err(e) => {
            let trace = match &e {
                Error::Adaptive { trace, .. } => trace.as_ref().clone(),
                _ => Vec::new(),
            };
            report.iterations = trace.len();
            let msg = e.to_string();
            log_progress(
                progress,
                &ProgressLine {
                    trial: index,
                    iteration: trace.len(),
                    n_pilot: trace.last().map_or(0, |r| r.n_pilot),
                    remaining_budget: trace.last().map_or(b_tot, |r| r.remaining_budget),
                    loss: f64::NAN,
                    projected: Vec::new(),
                    stop: None,
                    error: Some(&msg),
                },
            );
            report.error = Some(msg);
            TrialOutcome { report, trace }
        }
    }
}

/// Runs every trial on up to `jobs` threads; results are ordered by trial index.
pub fn run_trials(
    cfg: &ExperimentConfig,
    problem: &Problem,
    prior: &CovPosterior,
    jobs: usize,
    progress: &ProgressSink,
) -> Vec<TrialOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<TrialOutcome>>> = (0..cfg.n_trials).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cfg.n_trials) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cfg.n_trials {
                    break;
                }
                let out = run_trial(cfg, problem, prior, i, progress);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every trial ran"))
        .collect()
}

/// Summary over finished trials.
pub fn summarize(cfg: &ExperimentConfig, problem: &Problem, outcomes: &[TrialOutcome]) -> CliResult<RunSummary> {
    let b = cfg.budget.resolve(&problem.costs);
    let ok: Vec<&TrialReport> = outcomes.iter().map(|o| &o.report).filter(|r| r.status == "ok").collect();
    let collect = |f: fn(&TrialReport) -> Option<f64>| Stats::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
    let oracle = problem.oracle()?;
    let baselines = baselines::baselines_at(oracle, &problem.costs, b)?;
    Ok(RunSummary {
        config: cfg.clone(),
        budget: b,
        n_trials: outcomes.len(),
        n_failed: outcomes.len() - ok.len(),
        mc_variance: mc_variance(oracle, b, &problem.costs)?,
        n_pilot_star: collect(|r| r.n_pilot_star.map(|n| n as f64)),
        oracle_variance: collect(|r| r.oracle_variance),
        vrr: collect(|r| r.vrr),
        baselines,
    })
}

/// Validates, runs all trials and writes `summary.json`, `trials.csv`,
/// `traces/trial_NNNN.csv`, `progress.jsonl` and `config.toml` under `out`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> CliResult<RunSummary> {
    cfg.validate()?;
    let problem = Problem::load(&cfg.ensemble)?;
    let spec = cfg
        .prior
        .as_ref()
        .ok_or_else(|| CliError::Validation("the run command needs a [prior] section".into()))?;
    let prior = spec.build(problem.n_models(), problem.oracle.as_ref())?;
    let b = cfg.budget.resolve(&problem.costs);
    let init = prior.min_pilot() as f64 * problem.costs.total();
    if !(b > init) {
        return Err(CliError::Validation(format!(
            "budget {b} cannot fund the initial {} pilot samples (cost {init})",
            prior.min_pilot()
        )));
    }
    std::fs::create_dir_all(out.join("traces"))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let progress: ProgressSink = Mutex::new(Some(BufWriter::new(File::create(out.join("progress.jsonl"))?)));
    let outcomes = run_trials(cfg, &problem, &prior, jobs, &progress);
    for o in &outcomes {
        write_csv(
            &out.join("traces").join(format!("trial_{:04}.csv", o.report.trial)),
            &trace_rows(&o.trace),
        )?;
    }
    let reports: Vec<TrialReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    write_csv(&out.join("trials.csv"), &reports)?;
    let summary = summarize(cfg, &problem, &outcomes)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
