//! Shared error type. Everything fallible in this crate returns `Result<T>`.
//!
//! The split matters for the CLI: input problems (bad JSON, malformed model,
//! dimension mismatches) map to exit code 2, while failed numerical
//! assertions map to exit code 1.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed model data. The message names the first offending entry
    /// by index, e.g. "transition row (s=2, a=1) sums to 0.98".
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A policy table failed validation (row sums, negativity, shape).
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    /// A probability vector (start distribution, hull weights, sampling
    /// distribution) failed validation.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input outside the domain of an operation, e.g. entropy gradients
    /// requested below the declared floor. Never silently clamped.
    #[error("domain violation: {0}")]
    Domain(String),

    /// A linear system that should be invertible was not (and the ridge
    /// fallback, where one is allowed, also failed).
    #[error("singular system: {0}")]
    Singular(String),

    /// Step size violates a precondition such as eta <= 1/(2 beta).
    #[error("step size: {0}")]
    StepSize(String),

    /// Operation not defined for the given variant, e.g. a mirror-descent
    /// greedification bound with an unbounded Bregman divergence.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A numerical postcondition that should hold by construction did not
    /// (solver residuals, certified identities). Indicates a genuinely
    /// pathological input or a bug, so it is an error rather than a panic.
    #[error("numerical check failed: {0}")]
    CheckFailed(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than failed math.
    /// The CLI uses this to pick exit code 2 over 1.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::InvalidPolicy(_)
                | Error::InvalidDistribution(_)
                | Error::DimensionMismatch(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
