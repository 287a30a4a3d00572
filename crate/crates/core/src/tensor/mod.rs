//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Operations on [`Tensor`]s attached to a [`Graph`] are recorded as nodes.
//! [`grad`] walks the graph backwards, and when asked to record, it builds
//! the gradient out of the same primitive operations. The result can then be
//! differentiated again, which is what training through unrolled latent
//! optimisation needs.
//!
//! ```
//! use dcs::tensor::{grad, Graph, Matrix};
//!
//! let g = Graph::new();
//! let x = g.leaf(Matrix::scalar(2.0));
//! let cube = x.square().mul(&x).unwrap();
//! let d1 = grad(&cube, &[&x], true).unwrap();
//! let d2 = grad(&d1[0], &[&x], false).unwrap();
//! assert_eq!(d1[0].item(), 12.0);
//! assert_eq!(d2[0].item(), 12.0);
//! ```

mod check;
mod graph;
mod matrix;
mod ops;

use thiserror::Error;

pub use check::{finite_diff, relative_error};
pub use graph::{grad, Graph, Tensor};
pub use matrix::{Matrix, Shape};
pub use ops::{elementwise, reduce, Elementwise, Reduction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left} and {right}")]
    ShapeMismatch { op: &'static str, left: Shape, right: Shape },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("gradient needs a scalar loss, got {0}")]
    NotScalar(Shape),
    #[error("{0}: operands live on different graphs")]
    GraphMismatch(&'static str),
    #[error("{op} takes {expected} operand(s), got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("cannot renormalise: row {row} is exactly zero")]
    DegenerateNorm { row: usize },
    #[error("{0}: empty tensor")]
    Empty(&'static str),
}
