use alloc::string::String;

use crate::field::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },

    #[error("sample {index} has shape {found}, expected {expected}")]
    SampleShape {
        index: usize,
        expected: Shape,
        found: Shape,
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("need at least {needed} samples, got {found}")]
    NotEnoughSamples { needed: usize, found: usize },

    #[error("spectrum is not positive at mode {index}")]
    NonPositiveSpectrum { index: usize },

    #[error("spectrum does not decay with k (log-log slope {slope})")]
    NotDecaying { slope: f64 },

    #[error("power-law fit did not converge after {iterations} iterations (residual norm {residual_norm})")]
    FitDidNotConverge { iterations: usize, residual_norm: f64 },

    #[error("target resolution {target} outside achievable range [{min}, {max}]")]
    Unachievable { target: f64, min: f64, max: f64 },

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("lattice side {side} too large for exhaustive enumeration (max {max})")]
    LatticeTooLarge { side: usize, max: usize },

    #[error("patch side {side} must be smaller than lattice side {lattice}")]
    SideTooLarge { side: usize, lattice: usize },

    #[error("factor {factor} does not divide {height}x{width}")]
    NotDivisible {
        factor: usize,
        height: usize,
        width: usize,
    },
}

impl Error {
    /// Failures of a numerical procedure, as opposed to rejected input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FitDidNotConverge { .. } | Error::NonFiniteState { .. }
        )
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
