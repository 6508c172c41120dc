//! Experiment harness behind the `mfpilot` binary: configuration documents, repeated
//! adaptive trials, oracle baselines, the fixed pilot-count study and the γ-transform
//! utility. Every command writes CSV/JSON only.

pub mod baselines;
pub mod config;
pub mod error;
pub mod pilot_study;
pub mod report;
pub mod run;
pub mod transform;

pub use config::{Budget, ExperimentConfig, Problem};
pub use error::{CliError, CliResult};
