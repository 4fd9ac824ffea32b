use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask has no support (all weights are zero)")]
    DegenerateMask,

    #[error("training failed at step {step}: {reason}")]
    TrainingFailure { step: usize, reason: String },

    #[error("inversion failed at step {step}: {reason}")]
    InversionFailure {
        step: usize,
        reason: String,
        /// Last few trace totals before the failure.
        trace_tail: Vec<f64>,
    },

    #[error("metric failed: {0}")]
    MetricFailure(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint corrupted: {0}")]
    Corruption(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

macro_rules! ensure_arg {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::invalid(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure_arg;
