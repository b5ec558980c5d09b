use thiserror::Error;

/// Errors raised by the physics modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("mod-4 class must be in 0..=3, got {0}")]
    InvalidModClass(usize),

    #[error(
        "truncation not converged: weight {weight:.3e} near the cutoff of dim_a = {dim_a} in class {class}; increase dim_a"
    )]
    TruncationNotConverged { dim_a: usize, class: usize, weight: f64 },

    #[error("no degeneracy between the mod-0 and mod-1 levels in pump range [{lo:.6e}, {hi:.6e}]")]
    NoDegeneracy { lo: f64, hi: f64 },

    #[error("step size underflow at t = {t:.6e} (h = {h:.3e}) after {steps} steps")]
    StepSizeUnderflow { t: f64, h: f64, steps: usize },

    #[error("exponential fit failed: {reason}")]
    FitFailure {
        reason: String,
        /// Seed estimate `(amplitude, rate, offset)` when one was available.
        seed: Option<(f64, f64, f64)>,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
