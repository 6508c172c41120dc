//! Covariance/correlation decomposition and the matrix-logarithm (γ) parameterization
//! of correlation matrices.
//!
//! A covariance matrix is split as `Σ = D R D` with `D = diag(σ)`. The correlation
//! part maps to an unconstrained vector `γ = vecl(log R)` of length `M(M-1)/2`, where
//! `vecl` stacks the strictly-lower triangle column by column. The inverse map solves
//! for the diagonal of `log R` by fixed-point iteration so that `exp` of the completed
//! matrix has a unit diagonal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs_diff, min_eigenvalue, spectral_map, symmetrize};

/// Default fixed-point tolerance of [`gamma_inverse`].
pub const DEFAULT_GAMMA_TOL: f64 = 1e-7;
/// Default iteration cap of [`gamma_inverse`].
pub const DEFAULT_GAMMA_MAX_ITER: usize = 1000;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = -1e-10;
const EIGEN_FLOOR: f64 = 1e-14;

/// Symmetric positive semidefinite matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    /// Validates and wraps a correlation matrix. The input is symmetrized first,
    /// off-diagonal entries within rounding of ±1 are clamped.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Dimension(format!(
                "correlation matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let mut r = symmetrize(&entries);
        let m = r.nrows();
        for i in 0..m {
            if (r[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidCorrelation(format!(
                    "diagonal entry {i} is {} (must be 1)",
                    r[(i, i)]
                )));
            }
            r[(i, i)] = 1.0;
            for j in 0..i {
                let v = r[(i, j)];
                if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidCorrelation(format!(
                        "entry ({i},{j}) = {v} outside [-1, 1]"
                    )));
                }
                let v = v.clamp(-1.0, 1.0);
                r[(i, j)] = v;
                r[(j, i)] = v;
            }
        }
        let lmin = min_eigenvalue(&r);
        if lmin < PSD_TOL {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lmin });
        }
        Ok(Self(r))
    }

    pub fn identity(m: usize) -> Self {
        Self(DMatrix::identity(m, m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl TryFrom<DMatrix<f64>> for CorrelationMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<CorrelationMatrix> for DMatrix<f64> {
    fn from(r: CorrelationMatrix) -> Self {
        r.0
    }
}

/// Symmetric positive semidefinite covariance matrix of model outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    /// Symmetrizes and validates positive semidefiniteness.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Dimension(format!(
                "covariance matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("covariance has non-finite entries".into()));
        }
        let s = symmetrize(&entries);
        let lmin = min_eigenvalue(&s);
        // Tolerance scales with the matrix magnitude so tiny covariances are not rejected
        // for roundoff that a unit-scale check would accept.
        let scale = s.diagonal().iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
        if lmin < PSD_TOL * scale {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lmin });
        }
        Ok(Self(s))
    }

    pub fn identity(m: usize) -> Self {
        Self(DMatrix::identity(m, m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }
}

impl TryFrom<DMatrix<f64>> for CovarianceMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<CovarianceMatrix> for DMatrix<f64> {
    fn from(s: CovarianceMatrix) -> Self {
        s.0
    }
}

/// Unconstrained coordinates of a covariance matrix: γ for the correlation part
/// and the log standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma: DVector<f64>,
    pub log_sigma: DVector<f64>,
}

impl GammaParams {
    pub fn new(gamma: DVector<f64>, log_sigma: DVector<f64>) -> Result<Self> {
        let m = log_sigma.len();
        if gamma.len() != m * (m.saturating_sub(1)) / 2 {
            return Err(Error::Dimension(format!(
                "gamma has length {} but {m} log-sigmas need {}",
                gamma.len(),
                m * (m.saturating_sub(1)) / 2
            )));
        }
        if gamma.iter().chain(log_sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("gamma parameters must be finite".into()));
        }
        Ok(Self { gamma, log_sigma })
    }

    pub fn from_covariance(s: &CovarianceMatrix) -> Result<Self> {
        let (sigma, r) = decompose_cov(s)?;
        Self::new(gamma_forward(&r)?, sigma.map(f64::ln))
    }

    pub fn to_covariance(&self, tol: f64) -> Result<CovarianceMatrix> {
        let r = gamma_inverse(&self.gamma, tol)?;
        compose_cov(&self.log_sigma.map(f64::exp), &r)
    }

    pub fn dim(&self) -> usize {
        self.log_sigma.len()
    }
}

/// Splits `S` into standard deviations and a correlation matrix.
pub fn decompose_cov(s: &CovarianceMatrix) -> Result<(DVector<f64>, CorrelationMatrix)> {
    let a = s.as_matrix();
    let m = a.nrows();
    let mut sigma = DVector::zeros(m);
    for i in 0..m {
        let d = a[(i, i)];
        if !(d > 0.0) {
            return Err(Error::DegenerateCovariance { index: i, value: d });
        }
        sigma[i] = d.sqrt();
    }
    let mut r = DMatrix::identity(m, m);
    for i in 0..m {
        for j in 0..i {
            let v = (a[(i, j)] / (sigma[i] * sigma[j])).clamp(-1.0, 1.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    // PSD of R follows from PSD of S; skip the re-validation eigendecomposition.
    Ok((sigma, CorrelationMatrix(r)))
}

/// `D R D` with `D = diag(sigma)`.
pub fn compose_cov(sigma: &DVector<f64>, r: &CorrelationMatrix) -> Result<CovarianceMatrix> {
    let m = r.dim();
    if sigma.len() != m {
        return Err(Error::Dimension(format!(
            "{} standard deviations for a {m}x{m} correlation matrix",
            sigma.len()
        )));
    }
    let rm = r.as_matrix();
    let s = DMatrix::from_fn(m, m, |i, j| sigma[i] * rm[(i, j)] * sigma[j]);
    Ok(CovarianceMatrix(s))
}

/// Strictly-lower-triangular entries in column-major order:
/// `(1,0), (2,0), …, (M-1,0), (2,1), …, (M-1,M-2)` (zero-based).
pub fn vecl(a: &DMatrix<f64>) -> DVector<f64> {
    let m = a.nrows();
    let mut out = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for j in 0..m {
        for i in (j + 1)..m {
            out.push(a[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Symmetric matrix with zero diagonal whose strict lower triangle is `v` in [`vecl`] order.
pub fn unvecl(v: &DVector<f64>, m: usize) -> Result<DMatrix<f64>> {
    if v.len() != m * m.saturating_sub(1) / 2 {
        return Err(Error::Dimension(format!(
            "vector of length {} does not fill the lower triangle of a {m}x{m} matrix",
            v.len()
        )));
    }
    let mut a = DMatrix::zeros(m, m);
    let mut k = 0;
    for j in 0..m {
        for i in (j + 1)..m {
            a[(i, j)] = v[k];
            a[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(a)
}

/// Matrix dimension `M` for a γ vector of the given length, if it is a triangular number.
pub fn dim_from_gamma_len(len: usize) -> Option<usize> {
    let m = ((1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
    (m * (m - 1) / 2 == len).then_some(m)
}

/// Forward γ-transform: `vecl(log R)` with the logarithm taken on the spectrum.
pub fn gamma_forward(r: &CorrelationMatrix) -> Result<DVector<f64>> {
    let a = r.as_matrix();
    let lmin = min_eigenvalue(a);
    if !(lmin > 1e-12) {
        return Err(Error::TransformDomain { min_eigenvalue: lmin });
    }
    let log_r = spectral_map(a, |l| l.max(EIGEN_FLOOR).ln());
    Ok(vecl(&log_r))
}

/// Inverse γ-transform with the default iteration cap.
pub fn gamma_inverse(gamma: &DVector<f64>, tol: f64) -> Result<CorrelationMatrix> {
    gamma_inverse_with_limit(gamma, tol, DEFAULT_GAMMA_MAX_ITER)
}

/// Inverse γ-transform by fixed-point iteration on the diagonal of `log R`.
///
/// Each sweep subtracts `log diag(exp A)` from `diag A`; iteration stops once the
/// Euclidean norm of that correction is at most `sqrt(M) * tol`. The returned matrix
/// is rescaled to an exact unit diagonal.
pub fn gamma_inverse_with_limit(
    gamma: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<CorrelationMatrix> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameters(format!("tolerance must be positive, got {tol}")));
    }
    let m = dim_from_gamma_len(gamma.len()).ok_or_else(|| {
        Error::Dimension(format!("gamma length {} is not a triangular number", gamma.len()))
    })?;
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameters("gamma has non-finite entries".into()));
    }
    let mut a = unvecl(gamma, m)?;
    let threshold = (m as f64).sqrt() * tol;
    let mut d = (m as f64).sqrt();
    let mut iterations = 0;
    while d > threshold {
        if iterations >= max_iter {
            return Err(Error::IterationLimit { iterations, residual: d });
        }
        let e = spectral_map(&a, f64::exp);
        let mut norm2 = 0.0;
        for i in 0..m {
            let delta = e[(i, i)].ln();
            a[(i, i)] -= delta;
            norm2 += delta * delta;
        }
        d = norm2.sqrt();
        if !d.is_finite() {
            return Err(Error::IterationLimit { iterations, residual: d });
        }
        iterations += 1;
    }
    // Dividing by the remaining diagonal keeps the result positive semidefinite, which
    // overwriting the diagonal alone does not when R is close to singular.
    let mut r = spectral_map(&a, f64::exp);
    let scale: Vec<f64> = (0..m).map(|i| r[(i, i)].sqrt()).collect();
    for i in 0..m {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let v = (r[(i, j)] / (scale[i] * scale[j])).clamp(-1.0, 1.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    let lmin = min_eigenvalue(&r);
    if lmin < PSD_TOL {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lmin });
    }
    Ok(CorrelationMatrix(r))
}

/// Max-norm distance between two correlation matrices.
pub fn correlation_distance(a: &CorrelationMatrix, b: &CorrelationMatrix) -> f64 {
    max_abs_diff(a.as_matrix(), b.as_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn monomial_prior_correlation() -> CorrelationMatrix {
        CorrelationMatrix::new(DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.975, 0.95, 0.925, //
                0.975, 1.0, 0.95, 0.95, //
                0.95, 0.95, 1.0, 0.95, //
                0.925, 0.95, 0.95, 1.0,
            ],
        ))
        .unwrap()
    }

    const MONOMIAL_PRIOR_GAMMA: [f64; 6] = [1.5883, 1.14386, 0.6994, 0.9291, 1.1858, 1.2053];

    #[test]
    fn decompose_identity() {
        let (sigma, r) = decompose_cov(&CovarianceMatrix::identity(3)).unwrap();
        assert_eq!(sigma.as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(r.as_matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn decompose_two_by_two() {
        let s = CovarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 9.0])).unwrap();
        let (sigma, r) = decompose_cov(&s).unwrap();
        assert_eq!(sigma.as_slice(), &[2.0, 3.0]);
        assert!((r.as_matrix()[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        let back = compose_cov(&sigma, &r).unwrap();
        assert!(max_abs_diff(back.as_matrix(), s.as_matrix()) < 1e-12 * 9.0);
    }

    #[test]
    fn decompose_scaled_identity() {
        let s = CovarianceMatrix::new(DMatrix::from_diagonal_element(4, 4, 0.01)).unwrap();
        let (sigma, r) = decompose_cov(&s).unwrap();
        for v in sigma.iter() {
            assert!((v - 0.1).abs() < 1e-15);
        }
        assert_eq!(r.as_matrix(), &DMatrix::identity(4, 4));
    }

    #[test]
    fn decompose_rejects_zero_variance() {
        let s = CovarianceMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).unwrap();
        match decompose_cov(&s) {
            Err(Error::DegenerateCovariance { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn compose_examples() {
        let s = compose_cov(&DVector::from_vec(vec![1.0, 1.0]), &CorrelationMatrix::identity(2)).unwrap();
        assert_eq!(s.as_matrix(), &DMatrix::identity(2, 2));
        let r = CorrelationMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0])).unwrap();
        let s = compose_cov(&DVector::from_vec(vec![2.0, 3.0]), &r).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 9.0]);
        assert!(max_abs_diff(s.as_matrix(), &expect) < 1e-14);

        let s0 = compose_cov(&DVector::from_element(4, 0.1), &monomial_prior_correlation()).unwrap();
        assert!((s0.get(0, 1) - 0.00975).abs() < 1e-15);
        assert!((s0.get(3, 3) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn compose_dimension_mismatch() {
        let err = compose_cov(&DVector::from_element(3, 1.0), &CorrelationMatrix::identity(2));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn vecl_ordering_is_column_major() {
        let a = DMatrix::from_row_slice(3, 3, &[9.0, 0.0, 0.0, 1.0, 9.0, 0.0, 2.0, 3.0, 9.0]);
        assert_eq!(vecl(&a).as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(vecl(&DMatrix::identity(4, 4)), DVector::zeros(6));
        let back = unvecl(&DVector::from_vec(vec![1.0, 2.0, 3.0]), 3).unwrap();
        assert_eq!(back[(2, 1)], 3.0);
        assert_eq!(back[(1, 2)], 3.0);
    }

    #[test]
    fn gamma_forward_identity_is_zero() {
        let g = gamma_forward(&CorrelationMatrix::identity(5)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(g.len(), 10);
    }

    #[test]
    fn gamma_forward_two_by_two_is_atanh() {
        let r = CorrelationMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        let g = gamma_forward(&r).unwrap();
        assert!((g[0] - 0.5_f64.atanh()).abs() < 1e-12);
        assert!((g[0] - 0.54931).abs() < 1e-5);
    }

    #[test]
    fn gamma_forward_monomial_prior() {
        let g = gamma_forward(&monomial_prior_correlation()).unwrap();
        for (got, want) in g.iter().zip(MONOMIAL_PRIOR_GAMMA) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn gamma_forward_three_model_prior() {
        let r = CorrelationMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.8, 0.7, 0.8, 1.0, 0.7, 0.7, 0.7, 1.0],
        ))
        .unwrap();
        let g = gamma_forward(&r).unwrap();
        for (got, want) in g.iter().zip([0.9429, 0.6573, 0.6573]) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn gamma_forward_rejects_singular() {
        let r = CorrelationMatrix::new(DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(matches!(gamma_forward(&r), Err(Error::TransformDomain { .. })));
    }

    #[test]
    fn gamma_inverse_zero_is_identity() {
        let r = gamma_inverse(&DVector::zeros(6), DEFAULT_GAMMA_TOL).unwrap();
        assert!(max_abs_diff(r.as_matrix(), &DMatrix::identity(4, 4)) < 1e-12);
    }

    #[test]
    fn gamma_inverse_two_by_two() {
        let r = gamma_inverse(&DVector::from_vec(vec![0.5_f64.atanh()]), DEFAULT_GAMMA_TOL).unwrap();
        assert!((r.as_matrix()[(0, 1)] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn gamma_inverse_monomial_prior() {
        let r = gamma_inverse(&DVector::from_vec(MONOMIAL_PRIOR_GAMMA.to_vec()), DEFAULT_GAMMA_TOL).unwrap();
        assert!(correlation_distance(&r, &monomial_prior_correlation()) < 1e-3);
    }

    #[test]
    fn gamma_inverse_rejects_bad_length_and_tol() {
        assert!(matches!(
            gamma_inverse(&DVector::zeros(4), 1e-7),
            Err(Error::Dimension(_))
        ));
        assert!(gamma_inverse(&DVector::zeros(3), 0.0).is_err());
    }

    #[test]
    fn gamma_inverse_reports_iteration_limit() {
        let g = DVector::from_vec(vec![2.0, -1.5, 2.5]);
        match gamma_inverse_with_limit(&g, 1e-12, 2) {
            Err(Error::IterationLimit { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dim_from_len() {
        assert_eq!(dim_from_gamma_len(0), Some(1));
        assert_eq!(dim_from_gamma_len(1), Some(2));
        assert_eq!(dim_from_gamma_len(6), Some(4));
        assert_eq!(dim_from_gamma_len(5), None);
    }

    fn random_correlation(m: usize, raw: &[f64]) -> CorrelationMatrix {
        // Gram matrix of m random vectors in R^(m+2), normalized to unit diagonal.
        let k = m + 2;
        let x = DMatrix::from_fn(m, k, |i, j| raw[i * k + j]);
        let g = &x * x.transpose();
        let d = g.diagonal().map(|v| 1.0 / v.sqrt());
        let r = DMatrix::from_fn(m, m, |i, j| g[(i, j)] * d[i] * d[j]);
        CorrelationMatrix::new(r).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip_from_correlation(m in 2usize..=6, raw in prop::collection::vec(-1.0f64..1.0, 48)) {
            prop_assume!(raw.iter().take(m * (m + 2)).any(|v| v.abs() > 1e-3));
            let r = random_correlation(m, &raw);
            prop_assume!(min_eigenvalue(r.as_matrix()) > 1e-6);
            let g = gamma_forward(&r).unwrap();
            let back = gamma_inverse(&g, 1e-7).unwrap();
            prop_assert!(correlation_distance(&back, &r) < 1e-6);
        }

        #[test]
        fn round_trip_from_gamma(m in 2usize..=6, raw in prop::collection::vec(-3.0f64..3.0, 15)) {
            let n = m * (m - 1) / 2;
            let g = DVector::from_column_slice(&raw[..n]);
            let r = gamma_inverse(&g, 1e-10).unwrap();
            // Output is a valid correlation matrix.
            prop_assert!(CorrelationMatrix::new(r.as_matrix().clone()).is_ok());
            let back = gamma_forward(&r).unwrap();
            let err = back.iter().zip(g.iter()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            prop_assert!(err < 1e-5, "err {err}");
        }
    }
}
