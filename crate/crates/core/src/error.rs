use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// Iterate left the admissible region or produced a non-finite value.
    #[error("diverged: {0}")]
    Divergence(String),

    #[error("landscape does not support {0}")]
    Unsupported(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),
}

impl Error {
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
