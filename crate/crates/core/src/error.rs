use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: expected {expected}, got {got}")]
    InvalidDimension { expected: usize, got: usize },

    #[error("degenerate direction: {0}")]
    DegenerateDirection(&'static str),

    #[error("invalid direction: {0}")]
    InvalidDirection(String),

    #[error("objective is not finite at the evaluated point (value {0})")]
    NonFiniteObjective(f64),

    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("label {label} outside class range 0..{classes}")]
    InvalidLabel { label: usize, classes: usize },

    #[error("batch of size {0} is too small, at least 2 samples are required")]
    InsufficientBatch(usize),

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("domain {0} does not exist")]
    MissingDomain(usize),

    #[error("invalid step index {0}, steps start at 1")]
    InvalidStep(usize),

    #[error("diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error(transparent)]
    Config(Box<crate::config::ConfigError>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl From<crate::config::ConfigError> for Error {
    fn from(e: crate::config::ConfigError) -> Self {
        Error::Config(Box::new(e))
    }
}

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
