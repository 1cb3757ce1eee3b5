use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum PadError {
    #[error("{op}: shape mismatch {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: domain violation: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward: {0}")]
    Backward(String),

    #[error("optimizer: {0}")]
    Optimizer(String),

    #[error("gradient check: {0}")]
    GradCheck(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PadError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        PadError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        PadError::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PadError::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation errors map to CLI exit code 1; everything else is a runtime error.
    pub fn is_validation(&self) -> bool {
        matches!(self, PadError::Config(_) | PadError::InvalidArgument(_))
    }
}

pub type Result<T> = std::result::Result<T, PadError>;
