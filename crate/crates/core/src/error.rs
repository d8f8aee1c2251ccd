use std::path::PathBuf;

use crate::dynamics::ModelKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("tape already used for a backward pass; reset it first")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model mismatch: expected {expected:?}, got {got:?}")]
    ModelMismatch { expected: ModelKind, got: ModelKind },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
