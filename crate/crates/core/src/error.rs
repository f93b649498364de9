use std::path::PathBuf;

use thiserror::Error;

use crate::model::Unit;

/// Failures while loading or validating data files.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{what}: schema violation at `{field}`: {message}")]
    Schema {
        what: &'static str,
        field: String,
        message: String,
    },

    #[error("{what}: unsupported schema_version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("unknown drug name(s): {}", names.join(", "))]
    UnknownDrug { names: Vec<String> },

    #[error("lab `{lab}`: {detail}")]
    RangeInversion { lab: String, detail: String },

    #[error("dangling {kind} reference `{id}`")]
    Dangling { kind: &'static str, id: String },

    #[error("no conversion from {from} to {to}")]
    UnitMismatch { from: Unit, to: Unit },

    #[error("{what}: {message}")]
    Invalid { what: &'static str, message: String },
}

impl ModelError {
    pub fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        ModelError::Invalid {
            what,
            message: message.into(),
        }
    }

    pub fn schema(what: &'static str, field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Schema {
            what,
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Errors raised by a support or primary backend.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("timed out after {0} ms")]
    Timeout(u64),
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed output: {0}")]
    Malformed(String),
    #[error("field `{field}` is not in the {agent} output schema")]
    UnknownField { agent: String, field: String },
    #[error("cancelled")]
    Cancelled,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown tenant `{0}`")]
    UnknownTenant(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum StepError {
    /// The primary backend failed; the turn was not committed and may be retried.
    #[error("primary backend failed (retriable): {0}")]
    Primary(BackendError),
    #[error("conversation already terminated")]
    Terminated,
    #[error("no turn in flight")]
    NoTurnInFlight,
    #[error(transparent)]
    Config(#[from] ConfigError),
}
