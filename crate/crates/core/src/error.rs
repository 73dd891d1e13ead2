use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("scoring failed for {subject}: {message}")]
    Scoring { subject: String, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid topology template: {0}")]
    Template(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("backend error after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend {
        message: String,
        attempts: u32,
        status: Option<u16>,
    },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("memory update failed at turn {turn}: {message}")]
    Memory { turn: u32, message: String },

    #[error("intervention failed at index {index}: {message}")]
    Intervention { index: usize, message: String },

    #[error("rollout aborted at stage `{stage}` on node `{node}`: {source}")]
    Rollout {
        stage: &'static str,
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("metric undefined: {0}")]
    MetricDomain(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("log schema mismatch: {0}")]
    Version(String),

    #[error("I/O error on {}: {source}", path.display())]
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

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(vec![message.into()])
    }

    pub(crate) fn at_stage(self, stage: &'static str, node: &str) -> Self {
        match self {
            already @ Error::Rollout { .. } => already,
            other => Error::Rollout {
                stage,
                node: node.to_string(),
                source: Box::new(other),
            },
        }
    }
}
