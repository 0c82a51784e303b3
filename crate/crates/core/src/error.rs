//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by validation, planning and simulation operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// A cluster description violates one of its invariants.
    #[error("invalid cluster spec: {0}")]
    InvalidSpec(String),

    /// A slot assignment violates a placement invariant.
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),

    /// Two inputs that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation input is out of its documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A partition count `k` is not admissible for the given cluster.
    #[error("invalid k: {0}")]
    InvalidK(String),

    /// A policy needed the previous iteration's popularity but none exists.
    #[error("missing popularity for iteration {0}")]
    MissingPopularity(usize),

    /// A trace-generator configuration is out of range.
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),

    /// A trace file row could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A trace file header does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// An I/O error while reading or writing a trace or report file.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
