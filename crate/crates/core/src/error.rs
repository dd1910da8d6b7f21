use thiserror::Error;

/// Errors raised by operator construction, solvers and the run pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("non-confining potential: {0}")]
    NonConfining(String),

    #[error("truncation radius too small: boundary weight e^(-V(±R)/2) = {weight:.3e} must be below {limit:.0e}")]
    TruncationTooSmall { weight: f64, limit: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("size cap exceeded for {what}: n = {n} > {cap}")]
    SizeCap { what: &'static str, n: usize, cap: usize },

    #[error("no spectral gap: alpha = {0}")]
    NoSpectralGap(f64),

    #[error("insufficient dynamic range: {0}")]
    InsufficientRange(String),

    #[error("contraction violated at step {step}: {after:.6e} > {before:.6e}")]
    ContractionViolated { step: usize, before: f64, after: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
