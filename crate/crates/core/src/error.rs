//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The covariance kernel is not differentiable on the diagonal s = t.
    #[error("mixed partial is singular on the diagonal s = t = {0}")]
    Singularity(f64),

    #[error("unsupported regime: alpha = {0} (must be < 2)")]
    UnsupportedRegime(f64),

    /// A series or integral diverges for the requested parameters.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("fit error: {0}")]
    Fit(String),

    /// Inputs are individually valid but inconsistent with each other.
    #[error("contract error: {0}")]
    Contract(String),

    /// Numerical failure, e.g. a covariance that is not positive definite.
    #[error("numeric error: {message} (minimum eigenvalue estimate {min_eigenvalue:e})")]
    Numeric { message: String, min_eigenvalue: f64 },

    /// Aggregated configuration problems, reported together.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        LabError::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        LabError::Contract(msg.into())
    }
}
