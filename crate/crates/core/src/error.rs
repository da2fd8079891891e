//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors produced by model construction, estimation and evaluation.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Matrix/vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An input violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// A solve failed or a quantity became non-finite.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
