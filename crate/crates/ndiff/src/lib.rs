//! Minimal reverse-mode automatic differentiation on dense `f64` arrays.
//!
//! The surface is deliberately small: a [`Tape`] of immutable nodes built in
//! creation order, a fixed set of ops with hand-written backward rules, and a
//! finite-difference checker used to verify every rule independently. No
//! threading, no views, no broadcasting beyond trailing-shape addition.

mod array;
mod check;
mod tape;

pub use array::Array;
pub use check::{finite_diff_check, numeric_gradient, FdCheck, REL_FLOOR};
pub use tape::{Tape, Var, COSINE_EPS};

use thiserror::Error;

/// Errors raised by array construction and tape ops. Shape problems name the
/// offending op and the shapes involved.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NdiffError {
    #[error("array shape {shape:?} does not hold {len} values")]
    BadConstruction { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got {shape:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of bounds for size {bound}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}
