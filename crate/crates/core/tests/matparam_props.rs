mod common;

use mfpilot_core::matparam::DEFAULT_GAMMA_TOL;
use mfpilot_core::{gamma_forward, gamma_inverse, CorrelationMatrix, RngStream};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inverse_undoes_forward(seed in any::<u64>(), m in 2usize..=6) {
        let r = common::gram_correlation(m, 2, &mut RngStream::new(seed).rng());
        let back = gamma_inverse(&gamma_forward(&r).unwrap(), DEFAULT_GAMMA_TOL).unwrap();
        prop_assert!((back.as_matrix() - r.as_matrix()).amax() <= 1e-6);
    }

    #[test]
    fn forward_undoes_inverse(m in 2usize..=6, raw in prop::collection::vec(-3.0f64..3.0, 15)) {
        let l = m * (m - 1) / 2;
        let g = DVector::from_column_slice(&raw[..l]);
        let r = gamma_inverse(&g, DEFAULT_GAMMA_TOL).unwrap();
        let again = gamma_forward(&r).unwrap();
        prop_assert!((again - &g).amax() <= 1e-5);
    }

    #[test]
    fn inverse_output_is_a_valid_correlation(m in 2usize..=6, raw in prop::collection::vec(-3.0f64..3.0, 15)) {
        let l = m * (m - 1) / 2;
        let r = gamma_inverse(&DVector::from_column_slice(&raw[..l]), DEFAULT_GAMMA_TOL).unwrap();
        prop_assert!(CorrelationMatrix::new(r.as_matrix().clone()).is_ok());
        for i in 0..m {
            prop_assert_eq!(r.as_matrix()[(i, i)], 1.0);
        }
    }
}

#[test]
fn identity_and_zero_are_fixed_points() {
    for m in 2..=6 {
        let g = gamma_forward(&CorrelationMatrix::identity(m)).unwrap();
        assert!(g.amax() <= 1e-12);
        let r = gamma_inverse(&DVector::zeros(m * (m - 1) / 2), DEFAULT_GAMMA_TOL).unwrap();
        assert!((r.as_matrix() - DMatrix::<f64>::identity(m, m)).amax() <= 1e-12);
    }
}
