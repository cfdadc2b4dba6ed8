use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the stimulus pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh too large: {0}")]
    SizeLimit(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("index error at line {line}: {message}")]
    Index { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("response model error: {0}")]
    Model(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    /// An optimization run failed part way; `last_good` is the most recent
    /// field whose loss evaluated cleanly.
    #[error("optimization aborted at step {step}: {source}")]
    Aborted {
        step: usize,
        #[source]
        source: Box<Error>,
        last_good: Box<crate::deformation::RbfField>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
