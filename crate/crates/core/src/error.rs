//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input vector or matrix has the wrong dimensions.
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A quantity that must be finite came out NaN or infinite. When the
    /// failure is tied to an extrapolation point, `point_index` names it.
    #[error("non-finite value in {what}{}", point_index.map(|i| format!(" (point {i})")).unwrap_or_default())]
    NonFinite {
        what: &'static str,
        point_index: Option<usize>,
    },

    /// The coupled integration produced a non-finite derivative.
    #[error("divergence at t = {time:.6} s in subsystem `{subsystem}`")]
    Divergence { time: f64, subsystem: &'static str },

    /// A scenario file or constructor argument failed validation. The message
    /// names the offending key.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
