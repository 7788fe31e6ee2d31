use thiserror::Error;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A feature component fell outside the unit interval or was not finite.
    #[error("feature component {index} = {value} is outside [0, 1]")]
    InputDomain { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    /// A configuration value is out of range; `field` names the offending key.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("dataset error at line {line}: {reason}")]
    Ingest { line: usize, reason: String },

    #[error("oracle failed for sample {sample}: {reason}")]
    Oracle { sample: u64, reason: String },

    #[error("{0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
