use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid set: {0}")]
    InvalidSet(String),

    /// The intersection projector ran out of cycles without a certified answer.
    #[error("intersection oracle did not converge after {iterations} cycles (residual {residual:e})")]
    OracleFailure { iterations: usize, residual: f64 },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid interval [{t1}, {t2})")]
    InvalidInterval { t1: f64, t2: f64 },

    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("malformed scenario field `{field}`: {message}")]
    Structural { field: String, message: String },

    #[error("scenario failed validation: {0}")]
    Validation(String),

    #[error("non-finite state for agent {agent} at t = {t}")]
    NonFiniteState { t: f64, agent: usize },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("generation failed: {0}")]
    Generation(String),
}

impl Error {
    pub(crate) fn structural(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Structural {
            field: field.into(),
            message: message.into(),
        }
    }
}
