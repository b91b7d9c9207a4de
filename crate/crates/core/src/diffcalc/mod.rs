//! Dense real arrays with reverse-mode automatic differentiation.
//!
//! A [`DiffGraph`] records a closed set of primitives ([`Op`]) over rank-2
//! [`Array`]s. Graphs are shape-polymorphic: the same graph evaluates a single
//! row or a batch of rows, which is how both the score network and compiled
//! constraints are run over many samples at once.
//!
//! ```
//! use scoreguide::diffcalc::{Array, DiffGraph};
//!
//! let mut g = DiffGraph::<f64>::new();
//! let x = g.input("x");
//! let y = g.mul(x, x);
//! let xv = Array::scalar(3.0);
//! let mut s = g.session();
//! assert_eq!(s.forward(y, &[("x", &xv)]).unwrap().data(), &[9.0]);
//! let grads = s.backward(&Array::scalar(1.0)).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod array;
mod gradcheck;
mod graph;

pub use array::{Array, Real};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{DiffGraph, Gradients, NodeId, Op, Session};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects a rank-2 array, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("column {index} out of range for {cols} columns")]
    ColumnOutOfRange { index: usize, cols: usize },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("forward value is not finite")]
    NonFinite,
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}
