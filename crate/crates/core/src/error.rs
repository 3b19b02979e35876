use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("modality mismatch: policy instrumented={policy}, observation instrumented={observation}")]
    Modality { policy: bool, observation: bool },

    #[error("stale forward cache (cache version {cache}, parameters version {params})")]
    StaleCache { cache: u64, params: u64 },

    #[error("integration did not converge: {0}")]
    Convergence(String),

    #[error("demonstration failed after {attempts} attempts (type {episode_type}, seed {seed})")]
    DemoFailed {
        episode_type: String,
        seed: u64,
        attempts: u32,
    },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
