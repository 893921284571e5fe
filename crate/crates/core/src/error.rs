use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("von Neumann series diverged at term {term} (norm {norm:e}); use a smaller preconditioning scale alpha")]
    Divergence { term: usize, norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("need at least one negative sample")]
    NoNegatives,

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
