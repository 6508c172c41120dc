use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfpilot_cli::transform::{cmd_transform, Direction};
use mfpilot_cli::{baselines, pilot_study, run, Budget, CliError, CliResult, ExperimentConfig};

const RUN_HELP: &str = "\
Runs n_trials adaptive pilot-sampling trials and writes, under --out:
  summary.json        resolved config, budget, N*_pilot / oracle variance / VRR statistics, baselines
  trials.csv          trial,seed,status,n_pilot_star,iterations,stop,family,predicted_variance,
                      oracle_variance,vrr,pilot_cost,realized_cost,estimate,predictive_q25,
                      predictive_median,predictive_q75,error
  traces/trial_NNNN.csv
                      iteration,n_pilot,remaining_budget,horizon,total,accuracy,cost,mc_std_error,
                      n_mc,family,budget_exhausted,stop   (horizon 0 = current loss)
  progress.jsonl      one line per iteration as trials progress
  config.toml         the resolved configuration";

const BASELINES_HELP: &str = "\
Oracle MC, MLMC-BEST and ACV-BEST variances at each budget in [baselines].budgets.
  baselines.csv       budget_pilots,budget,estimator,family,variance,vrr,cost,counts
  baselines.json      config and rows";

const PILOT_HELP: &str = "\
For each pilot count in [pilot_study].grid and each seed: estimate the covariance from fresh
pilot samples, optimize the estimator with the remaining budget, and compare predicted with
actual (oracle) variance.
  pilot_study.csv          seed_index,seed,n_pilot,remaining_budget,status,family,
                           predicted_variance,actual_variance,underestimation,error
  pilot_study_summary.csv  n_pilot,n_ok,actual_mean,actual_median,actual_q25,actual_q75,
                           predicted_median,underestimation_median   (n_pilot 0 = oracle)";

#[derive(Parser)]
#[command(name = "mfpilot", version, about = "Adaptive pilot sampling for multi-fidelity Monte Carlo")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Trials run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Total budget, absolute or as `<n>x-pilot`.
    #[arg(long, global = true)]
    budget: Option<Budget>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(long_about = RUN_HELP)]
    Run,
    #[command(long_about = BASELINES_HELP)]
    Baselines,
    #[command(name = "pilot-study", long_about = PILOT_HELP)]
    PilotStudy,
    /// Forward (matrix to γ) or inverse (γ to matrix) transform of a JSON or delimited file.
    Transform {
        file: PathBuf,
        #[arg(long, conflicts_with = "forward")]
        inverse: bool,
        #[arg(long)]
        forward: bool,
        /// Convergence tolerance of the inverse transform.
        #[arg(long)]
        tol: Option<f64>,
    },
}

impl Cli {
    fn experiment(&self) -> CliResult<(ExperimentConfig, PathBuf)> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Validation("--config is required".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("mfpilot-out"));
        Ok((cfg, out))
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run => {
            let (cfg, out) = cli.experiment()?;
            let s = run::cmd_run(&cfg, &out, cli.jobs)?;
            let fmt = |x: &Option<mfpilot_cli::report::Stats>| {
                x.map_or("n/a".to_string(), |s| format!("{:.3} ± {:.3}", s.mean, s.std))
            };
            println!(
                "{} trials ({} failed): N*_pilot {}, VRR {}; reports in {}",
                s.n_trials,
                s.n_failed,
                fmt(&s.n_pilot_star),
                fmt(&s.vrr),
                out.display()
            );
            match s.n_failed {
                0 => Ok(()),
                f if f == s.n_trials => Err(CliError::Runtime("every trial failed; see trials.csv".into())),
                f => Err(CliError::PartialFailure { failed: f, total: s.n_trials }),
            }
        }
        Command::Baselines => {
            let (cfg, out) = cli.experiment()?;
            for r in baselines::cmd_baselines(&cfg, &out)? {
                println!(
                    "{:>8.1}x  {:<9} {:<6} variance {:.6e}  VRR {:.3}",
                    r.budget_pilots, r.estimator, r.family, r.variance, r.vrr
                );
            }
            Ok(())
        }
        Command::PilotStudy => {
            let (cfg, out) = cli.experiment()?;
            let res = pilot_study::cmd_pilot_study(&cfg, &out)?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            for r in &res.summary {
                println!(
                    "N_pilot {:>4}: actual median {:.4e}, predicted median {:.4e}, underestimation {:.2}",
                    r.n_pilot, r.actual_median, r.predicted_median, r.underestimation_median
                );
            }
            Ok(())
        }
        Command::Transform { file, inverse, forward, tol } => {
            let direction = match (inverse, forward) {
                (true, _) => Some(Direction::Inverse),
                (_, true) => Some(Direction::Forward),
                _ => None,
            };
            let res = cmd_transform(file, direction, *tol)?;
            let text = serde_json::to_string_pretty(&res)?;
            match &cli.out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
