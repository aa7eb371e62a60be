//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by problem construction, solvers and verification.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration: unsupported set kind, bad penalty, missing
    /// smoothness constant, malformed rotation, and the like.
    Config(String),
    /// Operands with inconsistent dimensions.
    Dimension(String),
    /// Non-finite values encountered mid-computation.
    Numerical(String),
    /// A rate or inexactness certificate could not be established.
    Certification(String),
    /// Assumption-3 schedule validation failure.
    Schedule(String),
    /// Ground-truth oracle failure (infeasible instance, size guard, scope).
    Oracle(String),
    /// Serialization or deserialization failure.
    Serde(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::Certification(msg) => write!(f, "certification error: {msg}"),
            Error::Schedule(msg) => write!(f, "invalid schedule: {msg}"),
            Error::Oracle(msg) => write!(f, "oracle error: {msg}"),
            Error::Serde(msg) => write!(f, "serialization error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
