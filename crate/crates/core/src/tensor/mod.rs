//! Rank-4 `f64` tensors and the reverse-mode tape that differentiates them.

mod graph;
pub mod kernels;
mod value;

pub use graph::{sigmoid, Graph, Var};
pub use value::{Dims, Tensor};
