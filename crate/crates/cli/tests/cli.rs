use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfpilot_core::{gamma_forward, CorrelationMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};

const R0: [[f64; 4]; 4] = [
    [1.0, 0.975, 0.95, 0.925],
    [0.975, 1.0, 0.95, 0.95],
    [0.95, 0.95, 1.0, 0.95],
    [0.925, 0.95, 0.95, 1.0],
];

fn mfpilot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfpilot")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"budget = "40x-pilot"
n_trials = 2
seed = 5
n_variance_samples = 50

[ensemble]
kind = "monomial"
n_models = 3

[prior]
family = "iw"
nu = 5

[loss]
n_mc = 50
{extra}"#
    );
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn run_writes_reproducible_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = mfpilot(&["run", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = mfpilot(&["run", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    for f in ["trials.csv", "traces/trial_0000.csv", "traces/trial_0001.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }

    let (h, rows) = read_csv(&a.join("trials.csv"));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r[col(&h, "status")], "ok");
        let vrr: f64 = r[col(&h, "vrr")].parse().unwrap();
        let n: usize = r[col(&h, "n_pilot_star")].parse().unwrap();
        let realized: f64 = r[col(&h, "realized_cost")].parse().unwrap();
        assert!(vrr > 1.0 && n >= 4);
        assert!(realized <= 40.0 * 1.11 * (1.0 + 1e-12));
    }
    let (h, trace) = read_csv(&a.join("traces/trial_0000.csv"));
    assert!(trace.iter().any(|r| r[col(&h, "horizon")] == "0"));

    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert!(summary.get("vrr").is_some(), "{summary}");
    assert!(a.join("config.toml").exists());
    let progress = std::fs::read_to_string(a.join("progress.jsonl")).unwrap();
    for line in progress.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let o = mfpilot(&["run", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "6"]);
    assert_eq!(code(&o), 0);
    assert_ne!(std::fs::read(a.join("trials.csv")).unwrap(), std::fs::read(b.join("trials.csv")).unwrap());
}

#[test]
fn invalid_configurations_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let zero = dir.path().join("zero.toml");
    let text = std::fs::read_to_string(small_config(dir.path(), "")).unwrap().replace("n_trials = 2", "n_trials = 0");
    std::fs::write(&zero, text).unwrap();
    assert_eq!(code(&mfpilot(&["run", "--config", zero.to_str().unwrap()])), 1);

    let unknown = small_config(dir.path(), "bogus = 1\n");
    assert_eq!(code(&mfpilot(&["run", "--config", unknown.to_str().unwrap()])), 1);
    assert_eq!(code(&mfpilot(&["run"])), 1);
    assert_eq!(code(&mfpilot(&["frobnicate"])), 1);
    let cfg = small_config(dir.path(), "");
    assert_eq!(code(&mfpilot(&["run", "--config", cfg.to_str().unwrap(), "--budget", "-3"])), 1);
    assert_eq!(code(&mfpilot(&["--help"])), 0);
}

#[test]
fn baselines_report_unit_mc_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("base");
    let o = mfpilot(&["baselines", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = read_csv(&out.join("baselines.csv"));
    assert_eq!(rows.len(), 9);
    for r in &rows {
        let vrr: f64 = r[col(&h, "vrr")].parse().unwrap();
        let cost: f64 = r[col(&h, "cost")].parse().unwrap();
        let budget: f64 = r[col(&h, "budget")].parse().unwrap();
        assert!(cost <= budget * (1.0 + 1e-12));
        match r[col(&h, "estimator")].as_str() {
            "MC" => assert_eq!(vrr, 1.0),
            _ => assert!(vrr > 1.0),
        }
    }
}

#[test]
fn transform_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let run = |file: &Path, extra: &[&str]| -> serde_json::Value {
        let mut args = vec!["transform", file.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = mfpilot(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice(&o.stdout).unwrap()
    };

    let eye = dir.path().join("eye.txt");
    std::fs::write(&eye, "1 0 0\n0 1 0\n0 0 1\n").unwrap();
    let g = run(&eye, &[]);
    assert_eq!(g.as_array().unwrap().len(), 3);
    assert!(g.as_array().unwrap().iter().all(|v| v.as_f64().unwrap().abs() < 1e-12));

    let r0 = dir.path().join("r0.json");
    std::fs::write(&r0, serde_json::to_string(&R0).unwrap()).unwrap();
    let g = run(&r0, &["--forward"]);
    let expected = gamma_forward(&CorrelationMatrix::new(DMatrix::from_fn(4, 4, |i, j| R0[i][j])).unwrap()).unwrap();
    let got: Vec<f64> = g.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(got.len(), 6);
    for (a, b) in got.iter().zip(expected.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }

    let gpath = dir.path().join("g.json");
    std::fs::write(&gpath, serde_json::to_string(&got).unwrap()).unwrap();
    let back = run(&gpath, &["--inverse", "--tol", "1e-12"]);
    for (i, row) in back.as_array().unwrap().iter().enumerate() {
        for (j, v) in row.as_array().unwrap().iter().enumerate() {
            assert!((v.as_f64().unwrap() - R0[i][j]).abs() < 1e-8);
        }
    }

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1 2\n3\n").unwrap();
    assert_eq!(code(&mfpilot(&["transform", bad.to_str().unwrap()])), 1);
}

fn write_monomial_table(dir: &Path, rows: usize) -> PathBuf {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let mut text = String::from("id,f0,f1,f2\n");
    for i in 0..rows {
        let z: f64 = rng.gen();
        text.push_str(&format!("{i},{:e},{:e},{:e}\n", z.powi(5), z.powi(4), z.powi(3)));
    }
    std::fs::write(dir.join("table.csv"), text).unwrap();
    std::fs::write(dir.join("meta.json"), r#"{"costs": [1.0, 0.1, 0.01]}"#).unwrap();
    let cfg = r#"budget = "40x-pilot"
n_trials = 2
seed = 1
n_variance_samples = 50

[ensemble]
kind = "tabular"
table = "table.csv"
metadata = "meta.json"

[prior]
family = "iw"
nu = 5

[loss]
n_mc = 50
"#;
    let p = dir.join("tab.toml");
    std::fs::write(&p, cfg).unwrap();
    p
}

#[test]
fn tabular_runs_and_reports_exhaustion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_monomial_table(dir.path(), 20_000);
    let out = dir.path().join("out");
    let o = mfpilot(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = read_csv(&out.join("trials.csv"));
    assert!(rows.iter().all(|r| r[col(&h, "status")] == "ok"));

    let small = tempfile::tempdir().unwrap();
    let cfg = write_monomial_table(small.path(), 60);
    let o = mfpilot(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = read_csv(&out.join("trials.csv"));
    assert!(rows.iter().all(|r| r[col(&h, "status")] == "failed"));
    assert!(rows[0][col(&h, "error")].contains("row"), "{:?}", rows[0]);
}

#[test]
fn pilot_study_writes_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "\n[pilot_study]\ngrid = [1, 3, 5, 10]\nn_seeds = 3\n");
    let out = dir.path().join("ps");
    let o = mfpilot(&["pilot-study", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dropped"));
    let (h, rows) = read_csv(&out.join("pilot_study.csv"));
    assert_eq!(rows.len(), 9);
    let (sh, summary) = read_csv(&out.join("pilot_study_summary.csv"));
    assert_eq!(summary.len(), 4);
    assert_eq!(summary[0][col(&sh, "n_pilot")], "0");
    for r in &rows {
        assert_eq!(r[col(&h, "status")], "ok");
    }
}
