use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),

    #[error("station {0} is unreachable from {1}")]
    Unreachable(u8, String),

    #[error("scene graph needs a human detection")]
    MissingHuman,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("sequence length {actual} does not match the model window {expected}")]
    WindowLength { expected: usize, actual: usize },

    #[error("all visibility counts are zero")]
    DegenerateVisibility,

    #[error("cannot normalize values that sum to zero")]
    ZeroSum,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("track history has {have} states, need {need}")]
    InsufficientHistory { have: usize, need: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("predictions and labels are misaligned: {0}")]
    Misaligned(String),

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Config problems map to CLI exit code 1; everything else is a runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::Unreachable(..) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
