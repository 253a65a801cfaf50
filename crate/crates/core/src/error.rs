use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite sample in channel {channel} at index {index}")]
    NonFinite { channel: usize, index: usize },

    #[error("insufficient channels: need at least {needed}, got {got}")]
    InsufficientChannels { needed: usize, got: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("numerical failure in {stage}: {detail}")]
    Numerical { stage: String, detail: String },

    #[error("training diverged at step {step}: loss {loss} exceeds {limit}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io: {0}")]
    RawIo(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
