use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular integrand: measure point {index} lies on the network and p = {p} < 2")]
    SingularIntegrand { index: usize, p: f64 },

    #[error("mollification failed after {halvings} bandwidth halvings (pairing {pairing:.3e} <= half of {l2sq:.3e})")]
    Mollification { halvings: usize, pairing: f64, l2sq: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
