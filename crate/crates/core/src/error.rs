use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("numerical failure: {context}")]
    NumericFailure { context: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("anchor policy requires a reference trajectory")]
    MissingReference,

    #[error("outer iteration aborted at iteration {iteration}: {reason}")]
    Aborted { iteration: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn numeric(context: impl Into<String>) -> Self {
        Error::NumericFailure {
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
