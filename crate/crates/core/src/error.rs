use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Array dimensions of two objects do not match.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A matrix that must be invertible is (numerically) singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A matrix expected to be symmetric positive definite is not.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// An iteration failed to reach its tolerance within the sweep budget.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// A black-box evaluation returned NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed serialized or textual data; `offset` is the byte position
    /// for binary inputs and the line number for text inputs.
    #[error("parse error at {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
