use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pruning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A model configuration violates a dimension constraint.
    #[error("invalid model configuration: {0}")]
    Config(String),

    /// Caller-supplied data is out of range or has the wrong shape.
    #[error("invalid input: {0}")]
    Input(String),

    /// A file exists but does not hold what we expected.
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A `N:M` target string could not be parsed or is out of range.
    #[error("invalid sparsity target {0:?}: expected \"N:M\" with 0 <= N <= M and M >= 2")]
    Target(String),

    /// The search could not be set up or produced no usable result.
    #[error("search failure: {0}")]
    Search(String),

    /// A statistic is undefined for the supplied data.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
