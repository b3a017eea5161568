use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid URL {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },

    #[error("knowledge base line {line}: {reason}")]
    KnowledgeBase { line: usize, reason: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("solver did not converge after {iterations} iterations (best residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("incomplete run directory, missing: {}", .0.join(", "))]
    IncompleteRun(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
