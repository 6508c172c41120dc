//! Shared fixtures for the kernel benchmarks.

use mfpilot_core::matparam::{compose_cov, decompose_cov};
use mfpilot_core::{
    gamma_forward, monomial_ensemble, monomial_oracle_cov, CorrelationMatrix, CostModel, CovPosterior,
    CovarianceMatrix, GammaGaussian, GammaStructure, InverseWishartParams, ModelEnsemble, PilotData, RngStream,
};
use nalgebra::{DMatrix, DVector};

/// The four-model correlation used as a prior guess in the examples.
pub fn r0() -> CorrelationMatrix {
    let v = [
        [1.0, 0.975, 0.95, 0.925],
        [0.975, 1.0, 0.95, 0.95],
        [0.95, 0.95, 1.0, 0.95],
        [0.925, 0.95, 0.95, 1.0],
    ];
    CorrelationMatrix::new(DMatrix::from_fn(4, 4, |i, j| v[i][j])).unwrap()
}

pub struct Fixture {
    pub oracle: CovarianceMatrix,
    pub costs: CostModel,
    pub pilot: PilotData,
}

/// Monomial oracle, costs and `n` pilot rows for `m` models.
pub fn monomial(m: usize, n: usize) -> Fixture {
    let mut e = monomial_ensemble(m).unwrap();
    let costs = e.cost_model().clone();
    let rows = e.pilot_rows(&mut RngStream::new(1).rng(), n).unwrap();
    Fixture {
        oracle: monomial_oracle_cov(m).unwrap(),
        pilot: PilotData::new(rows, costs.total()).unwrap(),
        costs,
    }
}

pub fn iw_prior(s: &CovarianceMatrix) -> CovPosterior {
    CovPosterior::InverseWishart(InverseWishartParams::with_mean(s, s.dim() as f64 + 2.0).unwrap())
}

/// γ-Gaussian prior centered on `s` with unit variances.
pub fn gg_prior(s: &CovarianceMatrix, structure: GammaStructure) -> CovPosterior {
    let (sig, r) = decompose_cov(s).unwrap();
    let g = gamma_forward(&r).unwrap();
    let l = g.len();
    let m = s.dim();
    CovPosterior::GammaGaussian(
        GammaGaussian::new(structure, g, DMatrix::identity(l, l), sig.map(f64::ln), DVector::from_element(m, 1.0))
            .unwrap(),
    )
}

/// Covariance with the scales of `s` and correlation `r`.
pub fn with_correlation(s: &CovarianceMatrix, r: &CorrelationMatrix) -> CovarianceMatrix {
    let (sig, _) = decompose_cov(s).unwrap();
    compose_cov(&sig, r).unwrap()
}
