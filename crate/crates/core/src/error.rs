use std::path::PathBuf;

use thiserror::Error;

use crate::providers::ProviderError;

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;

/// Errors surfaced by the pipeline stages.
#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("unverifiable question {id}: {reason}")]
    Unverifiable { id: String, reason: String },

    #[error("missing pass rate for {0}")]
    MissingRate(String),

    #[error("empty graph")]
    EmptyGraph,

    #[error("node not in graph: {0}")]
    UnknownNode(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("empty population")]
    EmptyPopulation,
}

impl ForgeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ForgeError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        ForgeError::Invalid(msg.into())
    }
}
