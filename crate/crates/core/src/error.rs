use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("step called on a finished episode")]
    StepAfterDone,

    #[error("invalid action {action} for {env} ({count} actions)")]
    InvalidAction {
        env: &'static str,
        action: usize,
        count: usize,
    },

    #[error("environment {0} is not supported")]
    UnsupportedEnv(String),

    #[error("anomaly kind {kind} cannot be applied as {expected}")]
    WrongKind {
        kind: &'static str,
        expected: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest mismatch in {path}: {reason}")]
    ManifestMismatch { path: PathBuf, reason: String },

    #[error("corrupt record in {path}: {reason}")]
    CorruptRecord { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    DivergedTraining(String),

    #[error("history too short: need at least {needed} observations, got {got}")]
    HistoryTooShort { needed: usize, got: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("series contains a single class")]
    SingleClass,

    #[error("cannot aggregate an empty set of series")]
    EmptySet,

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
