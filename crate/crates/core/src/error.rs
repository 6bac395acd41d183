//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by solver, transform, and verification routines.
#[derive(Debug, Error)]
pub enum KsError {
    /// A parameter violated a precondition (value out of range, wrong sign, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A grid was too coarse to represent the requested modes without aliasing.
    #[error("aliasing refused: {0}")]
    Aliasing(String),

    /// Two objects that must share a discretization did not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The requested noise spectrum is not trace class.
    #[error("trace-class violation: {0}")]
    TraceClass(String),

    /// Picard iteration failed to contract within the iteration cap.
    #[error(
        "fixed-point iteration did not contract after {iterations} iterations \
         (last residual ratio {last_ratio:.3}); shrink the window or the noise intensity"
    )]
    NonContraction { iterations: usize, last_ratio: f64 },

    /// A trajectory left the representable range.
    #[error("path diverged at t = {t:.6e} (norm overflow)")]
    Diverged { t: f64 },

    /// A statistical routine was asked for an estimate it cannot support.
    #[error("too few samples: {0}")]
    TooFewSamples(String),

    /// A rate fit was rejected because the window is not in the scaling regime.
    #[error("rejected fit window: {0}")]
    RejectedWindow(String),

    /// Configuration file or override problem.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KsError>;
