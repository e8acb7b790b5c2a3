//! Reverse-mode automatic differentiation over matrix-shaped tensors.
//!
//! Forward operations are recorded on a [`Tape`]. [`Tape::backward`] computes
//! plain leaf gradients; [`Tape::grad_graph`] records the reverse pass on the
//! same tape so gradients can be differentiated again, which is what the
//! second-order meta-gradient needs. Both passes share one set of
//! vector-Jacobian product rules.

mod check;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use check::{
    differentiable_step, grad_check, grad_check_at, relative_error, second_order_trace, tape_fn,
    GradCheckReport, MetaGradMode, REL_ERROR_FLOOR,
};
pub use params::{BoundParams, ParameterSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("domain error: {0}")]
    DomainError(&'static str),
    #[error("backward root must be 1x1, got {0:?}")]
    NonScalarRoot([usize; 2]),
    #[error("function is not finite at the evaluation point")]
    NonFiniteFunction,
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
}

#[cfg(test)]
mod tests;
