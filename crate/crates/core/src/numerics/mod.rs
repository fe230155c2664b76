//! Tensor container and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain float64 value (shape + row-major data) used for
//! model parameters and results. A [`Tape`] records primitive operations
//! during a forward pass and replays them in reverse to populate gradients.
//! [`GradCheck`] compares every analytic gradient against central finite
//! differences, which is the project's ground truth for correctness.
//!
//! All arithmetic is 64-bit. Any non-finite value produced by a forward or
//! backward rule aborts the step with an error naming the operation; silent
//! NaN propagation is treated as a bug, never a numeric curiosity.

mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use rng::RngState;
pub use tape::{FaultInjection, Tape, Var};
pub use tensor::Tensor;

/// Phase in which a numeric fault was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Forward,
    Backward,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Forward => write!(f, "forward"),
            Phase::Backward => write!(f, "backward"),
        }
    }
}

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: empty dimension in shape {shape:?}")]
    EmptyDimension { op: &'static str, shape: Vec<usize> },
    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("{op}: invalid rank for shape {shape:?}")]
    BadRank { op: &'static str, shape: Vec<usize> },
    #[error("invalid dropout probability {p}; require 0 <= p < 1")]
    InvalidProbability { p: f64 },
    #[error("label {label} out of range for {classes} classes at row {row}")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        row: usize,
    },
    #[error("non-finite value produced by {op} during {phase} pass")]
    NonFinite { op: &'static str, phase: Phase },
    #[error("backward has already run on this tape")]
    BackwardAlreadyRun,
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
}
