use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the model, sampler and post-processing layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied values outside an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// A parameter violates a distribution's support.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix dimensions disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A linear-algebra routine could not proceed (singular or non-PD matrix).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The sampler state no longer satisfies its invariants.
    #[error("corrupt sampler state: {0}")]
    State(String),

    /// A pipeline stage ran before the artifacts it depends on exist.
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
