//! Error type shared by all modules.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CtdError>;

/// Errors raised by model construction and numerical evaluation.
#[derive(Debug, Clone, Error)]
pub enum CtdError {
    /// A parameter or matrix failed validation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An evaluation point lies outside the domain of a curve or formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quantity that must have positive variance is deterministic.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    /// A quadrature or convolution domain does not capture enough mass.
    #[error("insufficient quadrature domain: {0}")]
    InsufficientDomain(String),

    /// Internally computed quantities violate a consistency bound.
    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),
}

impl CtdError {
    /// True for errors that indicate bad caller input rather than a
    /// numerical breakdown. The CLI maps these to a different exit status.
    pub fn is_input_error(&self) -> bool {
        matches!(self, CtdError::InvalidInput(_))
    }
}
