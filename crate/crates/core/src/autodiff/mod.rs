//! Tape-based reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.

mod graph;
pub mod kernels;

pub use graph::{Axis, Graph, Var};
