//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! Graphs are define-by-run: every call on a [`Graph`] executes the op and
//! appends a node, so a fresh graph is built per minibatch. The tape can be
//! replayed with perturbed leaves, which is what [`gradcheck`] uses.

mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use gradcheck::{finite_diff_gradcheck, GradcheckOptions, GradcheckReport, LeafCheck, Verdict};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::{CustomOp, NormKind, Op, OpAttrs, OpKind};
pub use tensor::Tensor;

pub(crate) use ops::gemm;
pub(crate) use tensor::fnv_step;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: String, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op} expects {expected} inputs, got {found}")]
    Arity { op: String, expected: usize, found: usize },
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("{op} is missing attribute `{attr}`")]
    MissingAttr { op: String, attr: String },
    #[error("no node with id {0}")]
    UnknownNode(usize),
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("zero-sized dimension in shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("label {label} is outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
}
