//! Simplicity-bias laboratory: a small reverse-mode engine, the models and
//! losses for feature reconstruction regularization, exact checks on the
//! replicated-feature toy problem, synthetic datasets, feature diagnostics,
//! and the multi-phase training pipeline.

pub mod checkpoint;
pub mod datasets;
pub mod diagnostics;
pub mod grad;
pub mod nets;
pub mod objectives;
pub mod optim;
pub mod phase;
pub mod pipeline;
pub mod svg;
pub mod theory;

use grad::GradError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: byte {offset}: {msg}")]
    Format { path: String, offset: u64, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("non-finite loss at step {step} (last finite loss {last_finite})")]
    NonFinite { step: usize, last_finite: f64 },
    #[error("unknown experiment `{id}`; valid ids: {valid}")]
    UnknownExperiment { id: String, valid: String },
    #[error("unknown phase `{0}`")]
    UnknownPhase(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
