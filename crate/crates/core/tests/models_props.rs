mod common;

use common::sample_cov;
use mfpilot_core::covinfer::scatter_and_stats;
use mfpilot_core::models::{write_table, TabularSchema};
use mfpilot_core::{
    monomial_ensemble, monomial_oracle_cov, CostModel, Error, ModelEnsemble, PilotData, RngStream, TabularEnsemble,
};
use nalgebra::{Cholesky, DMatrix};

#[test]
fn oracle_is_positive_definite() {
    for m in 2..=5 {
        let s = monomial_oracle_cov(m).unwrap();
        assert!(Cholesky::new(s.as_matrix().clone()).is_some(), "M = {m}");
    }
    assert!(monomial_oracle_cov(1).is_err());
    assert!(monomial_oracle_cov(6).is_err());
}

/// Running first and second moments over chunks.
fn empirical_cov(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut e = monomial_ensemble(m).unwrap();
    let root = RngStream::new(seed);
    let chunk = 1_000_000.min(n);
    let mut sum = DMatrix::<f64>::zeros(1, m);
    let mut cross = DMatrix::<f64>::zeros(m, m);
    let mut done = 0;
    let mut i = 0;
    while done < n {
        let take = chunk.min(n - done);
        let x = e.pilot_rows(&mut root.substream(i).rng(), take).unwrap();
        sum += x.row_sum();
        cross += x.transpose() * &x;
        done += take;
        i += 1;
    }
    let nf = n as f64;
    let mean = sum / nf;
    (cross - mean.transpose() * &mean * nf) / (nf - 1.0)
}

#[test]
fn empirical_covariance_matches_the_oracle() {
    let m = 5;
    let oracle = monomial_oracle_cov(m).unwrap();
    let c = empirical_cov(m, 10_000_000, 8);
    for i in 0..m {
        for j in 0..m {
            let o = oracle.as_matrix()[(i, j)];
            let rel = (c[(i, j)] - o).abs() / o.abs();
            assert!(rel < 0.01, "({i},{j}): {} vs {o}", c[(i, j)]);
        }
    }
}

#[test]
fn sample_covariance_error_decays_at_the_root_n_rate() {
    let m = 4;
    let oracle = monomial_oracle_cov(m).unwrap();
    let reps = 30;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, n) in [100usize, 1_000, 10_000, 100_000].into_iter().enumerate() {
        let mut err = 0.0;
        for r in 0..reps {
            let x = monomial_ensemble(m)
                .unwrap()
                .pilot_rows(&mut RngStream::with_index(k as u64, r).rng(), n)
                .unwrap();
            err += (sample_cov(&x) - oracle.as_matrix()).norm();
        }
        xs.push((n as f64).ln());
        ys.push((err / reps as f64).ln());
    }
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.1, "slope {slope}");
}

#[test]
fn pilot_cost_is_rows_times_total_cost() {
    let w = CostModel::new(vec![1.0, 0.006, 0.004]).unwrap();
    let rows = DMatrix::from_fn(5, 3, |i, j| (i + j) as f64);
    let data = PilotData::new(rows, w.total()).unwrap();
    assert!((data.total_cost() - 5.05).abs() < 1e-12);

    let e = monomial_ensemble(4).unwrap();
    assert_eq!(e.cost_model().as_slice(), &[1.0, 0.1, 0.01, 0.001]);
    let mut d = PilotData::empty(4, e.cost_model().total());
    let mut e = e;
    d.extend(&e.pilot_rows(&mut RngStream::new(1).rng(), 7).unwrap()).unwrap();
    assert!((d.total_cost() - 7.0 * 1.111).abs() < 1e-12);
}

#[test]
fn replayed_table_reproduces_pilot_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let m = 4;
    let mut mono = monomial_ensemble(m).unwrap();
    let rows = mono.pilot_rows(&mut RngStream::new(21).rng(), 40).unwrap();
    let table = write_table(&dir.path().join("mono.csv"), &rows).unwrap();
    let schema = TabularSchema {
        costs: mono.cost_model().as_slice().to_vec(),
        columns: None,
    };
    let mut tab = TabularEnsemble::from_csv(&table, &schema).unwrap();
    assert_eq!(tab.n_rows(), 40);

    let mut rng = RngStream::new(0).rng();
    let first = tab.pilot_rows(&mut rng, 25).unwrap();
    let rest = tab.pilot_rows(&mut rng, 15).unwrap();
    assert_eq!(first, rows.rows(0, 25).into_owned());
    assert_eq!(rest, rows.rows(25, 15).into_owned());

    let a = scatter_and_stats(&PilotData::new(rows.rows(0, 25).into_owned(), 1.0).unwrap()).unwrap();
    let b = scatter_and_stats(&PilotData::new(first, 1.0).unwrap()).unwrap();
    assert_eq!(a.unbiased_cov(), b.unbiased_cov());
}

#[test]
fn exhausted_table_reports_the_missing_row() {
    let dir = tempfile::tempdir().unwrap();
    let rows = DMatrix::from_fn(10, 2, |i, j| (i * 2 + j) as f64);
    let table = write_table(&dir.path().join("t.csv"), &rows).unwrap();
    let schema = TabularSchema {
        costs: vec![1.0, 0.1],
        columns: None,
    };
    let mut tab = TabularEnsemble::from_csv(&table, &schema).unwrap();
    let mut rng = RngStream::new(0).rng();
    tab.pilot_rows(&mut rng, 10).unwrap();
    match tab.pilot_rows(&mut rng, 1) {
        Err(Error::Exhausted { row, remaining, requested, .. }) => {
            assert_eq!(row, 11);
            assert_eq!(remaining, 0);
            assert_eq!(requested, 1);
        }
        other => panic!("expected exhaustion, got {other:?}"),
    }
}

#[test]
fn malformed_tables_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "id,f0,f1\n0,1.0,2.0\n1,3.0,oops\n").unwrap();
    let schema = TabularSchema {
        costs: vec![1.0, 0.1],
        columns: None,
    };
    match TabularEnsemble::from_csv(&path, &schema) {
        Err(Error::Schema { row, .. }) => assert_eq!(row, 2),
        other => panic!("expected a schema error, got {other:?}"),
    }
}
