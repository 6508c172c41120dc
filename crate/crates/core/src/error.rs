use thiserror::Error;

use crate::acv::AllocationFamily;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate covariance: diagonal entry {index} is {value} (must be > 0)")]
    DegenerateCovariance { index: usize, value: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("gamma transform requires a strictly positive definite correlation matrix (smallest eigenvalue {min_eigenvalue:e})")]
    TransformDomain { min_eigenvalue: f64 },

    #[error("inverse gamma transform did not converge after {iterations} iterations (residual {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("cholesky factorization failed after diagonal jitter up to {max_jitter:e}")]
    Factorization { max_jitter: f64 },

    #[error("inverse-Wishart mean undefined: nu = {nu} must exceed M + 1 = {limit}")]
    UndefinedMean { nu: f64, limit: f64 },

    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),

    #[error("insufficient pilot data: have {have} rows, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("sample covariance is rank deficient (smallest eigenvalue {min_eigenvalue:e}); collect more pilot samples")]
    InferenceDegeneracy { min_eigenvalue: f64 },

    #[error("quantile truncation kept {kept} of {total} simulated draws; at least {need} required")]
    Truncation { kept: usize, total: usize, need: usize },

    #[error("posterior draw {slot} failed {attempts} times in a row: {source}")]
    PosteriorSampling {
        slot: usize,
        attempts: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("coupling system is singular (condition estimate {condition:e})")]
    SingularCoupling { condition: f64 },

    #[error("budget {budget} is infeasible for {family}; minimum feasible budget is {min_budget}")]
    BudgetInfeasible {
        budget: f64,
        min_budget: f64,
        family: AllocationFamily,
    },

    #[error("invalid sample allocation: {0}")]
    InvalidAllocation(String),

    #[error("model evaluation failed for model {model} at sample {sample}: {reason}")]
    Evaluation {
        model: usize,
        sample: usize,
        reason: String,
    },

    #[error("{path}: table exhausted at row {row} ({remaining} rows remaining, {requested} requested)")]
    Exhausted {
        path: String,
        row: usize,
        remaining: usize,
        requested: usize,
    },

    #[error("{path}: schema error at row {row}: {reason}")]
    Schema {
        path: String,
        row: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("adaptive run failed after {iterations} iterations: {source}")]
    Adaptive {
        iterations: usize,
        trace: Box<Vec<crate::adaptive::IterationRecord>>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
