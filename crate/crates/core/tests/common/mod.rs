#![allow(dead_code)]

use mfpilot_core::{CorrelationMatrix, CostModel, CovarianceMatrix};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Correlation from a normalized Gram matrix of `m + extra` standard normal columns.
pub fn gram_correlation<R: Rng>(m: usize, extra: usize, rng: &mut R) -> CorrelationMatrix {
    let x = DMatrix::<f64>::from_fn(m, m + extra, |_, _| rng.sample(StandardNormal));
    let g = &x * x.transpose();
    let d: Vec<f64> = (0..m).map(|i| g[(i, i)].sqrt()).collect();
    let mut r = DMatrix::from_fn(m, m, |i, j| g[(i, j)] / (d[i] * d[j]));
    for i in 0..m {
        r[(i, i)] = 1.0;
    }
    CorrelationMatrix::new(r).unwrap()
}

/// A positive definite covariance with log-uniform scales.
pub fn random_cov<R: Rng>(m: usize, rng: &mut R) -> CovarianceMatrix {
    let r = gram_correlation(m, 3, rng);
    let s: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.gen_range(-1.0..0.5))).collect();
    CovarianceMatrix::new(DMatrix::from_fn(m, m, |i, j| s[i] * s[j] * r.as_matrix()[(i, j)])).unwrap()
}

/// Decreasing costs with `w[0] = 1`.
pub fn random_costs<R: Rng>(m: usize, rng: &mut R) -> CostModel {
    let mut w: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.gen_range(-3.0..-0.1))).collect();
    w.sort_by(|a, b| b.total_cmp(a));
    w[0] = 1.0;
    CostModel::new(w).unwrap()
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

/// Unbiased sample covariance of the rows of `x`.
pub fn sample_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let mut c = DMatrix::zeros(x.ncols(), x.ncols());
    for r in x.row_iter() {
        let d = (r - &mean).transpose();
        c += &d * d.transpose();
    }
    c / (n - 1.0)
}
