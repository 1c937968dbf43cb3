//! Error type shared by every module.

use thiserror::Error;

/// Crate-wide error enum.
#[derive(Debug, Error)]
pub enum CcoError {
    /// A hyperparameter or request violates a documented precondition.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A caller broke an interface contract (mismatched dimensions, missing
    /// previous-iterate values, unknown block ids, ...).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Malformed input data; `line` is 1-based when known.
    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    /// An I/O failure while reading or writing datasets, traces or summaries.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// The iterate produced a NaN/Inf or left the divergence guard region.
    #[error("run aborted at iteration {iteration}: {reason}")]
    RunAborted { iteration: u64, reason: String },

    /// A metric was requested on an empty restriction.
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
}

pub type Result<T> = std::result::Result<T, CcoError>;

impl CcoError {
    pub fn invalid_config(msg: impl Into<String>) -> Self {
        CcoError::InvalidConfig(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        CcoError::ContractViolation(msg.into())
    }

    pub fn data(line: usize, msg: impl Into<String>) -> Self {
        CcoError::Data {
            line,
            message: msg.into(),
        }
    }
}
