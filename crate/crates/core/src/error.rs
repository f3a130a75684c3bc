use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or lengths do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A precondition of the called operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("simulation diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("training diverged at epoch {epoch} ({component}): {detail}")]
    Training {
        epoch: usize,
        component: String,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// A pipeline stage needs outputs from a stage that has not run yet.
    #[error("missing prerequisite: {0}")]
    MissingStage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
