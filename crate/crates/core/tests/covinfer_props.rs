mod common;

use mfpilot_core::covinfer::{gaussian_product, iw_update, moment_match, simulate_gamma_draws, TruncationMode};
use mfpilot_core::randmat::sample_mvn;
use mfpilot_core::{
    bayes_update, gamma_forward, monomial_ensemble, posterior_point_estimate, posterior_sample, project_posterior,
    CovPosterior, CovarianceMatrix, GammaGaussian, GammaStructure, InferenceConfig, InverseWishartParams,
    ModelEnsemble, PilotData, RngStream,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn data_from(seed: u64, m: usize, n: usize) -> (CovarianceMatrix, PilotData) {
    let mut rng = RngStream::new(seed).rng();
    let s = common::random_cov(m, &mut rng);
    let rows = DMatrix::from_fn(n, m, |_, _| 0.0);
    let mut rows = rows;
    for i in 0..n {
        let v = sample_mvn(&DVector::zeros(m), &s, &mut rng).unwrap();
        rows.row_mut(i).copy_from(&v.transpose());
    }
    (s, PilotData::new(rows, 1.0).unwrap())
}

fn spd<R: rand::Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    common::random_cov(m, rng).into_inner()
}

/// Product over models of Var(Σ_ii) / E[Σ_ii]², closed form for IW(ν, H).
fn normalized_diag_variance(p: &InverseWishartParams) -> f64 {
    let m = p.dim() as f64;
    (2.0 / (p.nu - m - 3.0)).powi(p.dim() as i32)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gaussian_product_adds_precisions(seed in any::<u64>(), p in 1usize..=6) {
        let mut rng = RngStream::new(seed).rng();
        let p0 = spd(p, &mut rng);
        let p1 = spd(p, &mut rng);
        let (_, post) = gaussian_product(&DVector::zeros(p), &p0, &DVector::from_element(p, 0.5), &p1).unwrap();
        let lhs = post.try_inverse().unwrap();
        let rhs = p0.try_inverse().unwrap() + p1.try_inverse().unwrap();
        prop_assert!((&lhs - &rhs).amax() <= 1e-10 * rhs.amax(), "{}", (&lhs - &rhs).amax() / rhs.amax());
    }

    #[test]
    fn iw_spread_contracts_for_nested_data(seed in any::<u64>(), m in 2usize..=4) {
        let (s, data) = data_from(seed, m, 40);
        let prior = InverseWishartParams::with_mean(&s, m as f64 + 4.0).unwrap();
        let mut last = f64::INFINITY;
        for n in [m + 1, m + 3, 10, 20, 40] {
            let d = PilotData::new(data.outputs().rows(0, n).into_owned(), 1.0).unwrap();
            let post = iw_update(&prior, &d).unwrap();
            let v = normalized_diag_variance(&post);
            prop_assert!(v <= last);
            last = v;
            prop_assert!(CovarianceMatrix::new(post.h.clone()).is_ok());
        }
    }

    #[test]
    fn posterior_outputs_are_valid_covariances(seed in any::<u64>(), full in any::<bool>()) {
        let m = 3;
        let (s, data) = data_from(seed, m, 12);
        let (sig, r) = mfpilot_core::matparam::decompose_cov(&s).unwrap();
        let structure = if full { GammaStructure::Full } else { GammaStructure::Diagonal };
        let gg = GammaGaussian::new(structure, gamma_forward(&r).unwrap(), DMatrix::identity(3, 3), sig.map(f64::ln), DVector::from_element(3, 1.0)).unwrap();
        let cfg = InferenceConfig { rng: RngStream::new(seed ^ 7), ..InferenceConfig::default() };
        for prior in [CovPosterior::InverseWishart(InverseWishartParams::with_mean(&s, 6.0).unwrap()), CovPosterior::GammaGaussian(gg)] {
            let post = bayes_update(&prior, &data, &cfg).unwrap();
            let est = posterior_point_estimate(&post).unwrap();
            prop_assert!(CovarianceMatrix::new(est.into_inner()).is_ok());
            for d in posterior_sample(&post, 20, RngStream::new(seed)).unwrap() {
                prop_assert!(CovarianceMatrix::new(d.into_inner()).is_ok());
            }
            let proj = project_posterior(&prior, &post, &data, 4, &cfg).unwrap();
            prop_assert!(CovarianceMatrix::new(posterior_point_estimate(&proj).unwrap().into_inner()).is_ok());
        }
    }
}

#[test]
fn truncation_widening_never_shrinks_the_likelihood_trace() {
    let mut e = monomial_ensemble(4).unwrap();
    let rows = e.pilot_rows(&mut RngStream::new(1).rng(), 30).unwrap();
    let d = PilotData::new(rows, 1.0).unwrap();
    let c = mfpilot_core::covinfer::scatter_and_stats(&d).unwrap().biased_cov;
    for seed in 0..5 {
        let draws = simulate_gamma_draws(&c, 30.0, 1000, RngStream::new(seed)).unwrap();
        for mode in [TruncationMode::Joint, TruncationMode::Marginal, TruncationMode::Winsorize] {
            let mut last = 0.0;
            for q in [(0.2, 0.8), (0.15, 0.85), (0.1, 0.9), (0.01, 0.99), (0.0, 1.0)] {
                let tr = moment_match(&draws, GammaStructure::Full, q, mode).unwrap().cov_gamma.trace();
                assert!(tr >= last, "{mode:?} {q:?}");
                last = tr;
            }
        }
    }
}

#[test]
fn iw_posterior_mean_approaches_the_truth() {
    let (s, data) = data_from(99, 3, 4000);
    let prior = InverseWishartParams::with_mean(&CovarianceMatrix::identity(3), 6.0).unwrap();
    let post = bayes_update(&CovPosterior::InverseWishart(prior), &data, &InferenceConfig::default()).unwrap();
    let est = posterior_point_estimate(&post).unwrap();
    let rel = (est.as_matrix() - s.as_matrix()).amax() / s.as_matrix().amax();
    assert!(rel < 0.1, "{rel}");
}
