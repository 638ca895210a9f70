//! Crate-wide error type and exit-code categories.

use std::io;
use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid dataset metadata: {0}")]
    InvalidMeta(String),

    #[error("sentence {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fold {fold}: training complement contains a single label class")]
    ComplementSingleLabel { fold: usize },

    #[error("head file {path}: {reason}")]
    HeadFormat { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn record(id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidRecord {
            id: id.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI contract: 2 = config/validation,
    /// 3 = data, 4 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParam(_) | Error::Config(_) => 2,
            Error::Io { .. }
            | Error::InvalidMeta(_)
            | Error::InvalidRecord { .. }
            | Error::Manifest { .. }
            | Error::Degenerate(_)
            | Error::ComplementSingleLabel { .. }
            | Error::HeadFormat { .. } => 3,
            Error::NonFiniteLoss { .. } | Error::DimensionMismatch { .. } => 4,
        }
    }
}
