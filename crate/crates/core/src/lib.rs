//! Multi-fidelity Monte Carlo estimation with Bayesian pilot sampling.
//!
//! The crate covers the pieces needed to decide how many pilot samples to draw before
//! committing the rest of a budget to an approximate control variate (ACV) estimator:
//!
//! * [`matparam`]: covariance/correlation types and the γ parameterization of correlations
//! * [`randmat`]: reproducible random streams and matrix-variate samplers
//! * [`covinfer`]: inverse-Wishart and γ-Gaussian posteriors over the model covariance
//! * [`acv`]: allocation families, optimal weights, variance formulas and allocation search
//! * [`loss`]: expected accuracy and cost losses and their projections
//! * [`adaptive`]: the adaptive pilot-sampling loop
//! * [`models`]: the monomial benchmark and replayed tabular ensembles

pub mod acv;
pub mod adaptive;
pub mod covinfer;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod matparam;
pub mod models;
pub mod randmat;

pub use acv::{
    coupling, estimator_variance, evaluate_acv, mc_variance, mlmc_allocation, optimal_variance, optimal_weights,
    optimize_allocation, AllocationFamily, AllocationResult, CostModel, CouplingStructure, EstimatorConfig,
    SampleAllocation,
};
pub use adaptive::{predictive_variance_samples, run_adaptive, AdaptiveConfig, AdaptiveResult, IterationRecord};
pub use covinfer::{
    bayes_update, posterior_point_estimate, posterior_sample, project_posterior, CovPosterior, GammaGaussian,
    GammaStructure, InferenceConfig, PilotData, TruncationMode,
};
pub use error::{Error, Result};
pub use loss::{expected_loss, loss_single, projected_expected_loss, LossConfig, LossReport};
pub use matparam::{gamma_forward, gamma_inverse, CorrelationMatrix, CovarianceMatrix, GammaParams};
pub use models::{monomial_ensemble, monomial_oracle_cov, ModelEnsemble, MonomialEnsemble, TabularEnsemble};
pub use randmat::{InverseWishartParams, RngStream};
