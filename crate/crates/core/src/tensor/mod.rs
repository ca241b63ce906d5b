//! Dense real arrays and a reverse-mode differentiation tape.

mod array;
mod graph;

pub use array::RealArray;
pub use graph::{Gradients, Graph, Var};

pub(crate) use graph::{log_sum_exp, softmax_row};

use alloc::vec::Vec;

/// Default floor applied to row norms before normalizing.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("shape {shape:?} does not describe {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("backward root must hold a single value, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("node {node} references a node that does not precede it")]
    CycleDetected { node: usize },
    #[error("variable {0} does not belong to this graph")]
    UnknownVar(usize),
}
