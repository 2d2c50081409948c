use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mismatched traces: {0}")]
    MismatchedTrace(String),

    #[error("mismatched gathers: {0}")]
    MismatchedGather(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("singular system: damping reached {mu:.3e} without a positive definite matrix")]
    SingularSystem { mu: f64 },

    #[error("propagation became unstable at step {step} (max |u| = {max_abs:.3e})")]
    Instability { step: usize, max_abs: f64 },

    #[error("non-finite misfit at iteration {iter}")]
    NonFinite { iter: usize },

    #[error("unknown case `{0}`")]
    UnknownCase(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
