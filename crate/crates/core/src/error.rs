use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke a documented precondition (shapes, value sets, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate die `{die_id}`: no healthy devices")]
    DegenerateDie { die_id: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path}: parse error at byte offset {offset}: {reason}")]
    Parse {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("need at least {needed} solutions, got {got}")]
    TooFewSolutions { needed: usize, got: usize },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::DegenerateDie { .. } => "degenerate_die",
            Error::EmptyDataset => "empty_dataset",
            Error::Parse { .. } => "parse",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::TooFewSolutions { .. } => "too_few_solutions",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
