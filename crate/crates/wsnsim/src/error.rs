//! Error types shared across the simulator.

use thiserror::Error;

/// Configuration problems: rejected before any episode runs.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("unknown preset `{0}` (expected table1, table2, or delay_study)")]
    UnknownPreset(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config file error: {0}")]
    Io(#[from] std::io::Error),
}

impl ConfigError {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::InvalidValue {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

/// Runtime failures inside a simulation run.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("cost applied to dead node {0}")]
    DeadNode(usize),

    #[error("no alive nodes remain")]
    NetworkDead,

    #[error("M/M/1 queue unstable: arrival rate {lambda} >= service rate {mu}")]
    UnstableQueue { lambda: f64, mu: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
