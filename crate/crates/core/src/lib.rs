//! Multi-person pose estimation on a small reverse-mode `f64` engine.
//!
//! The crate provides the tensor/autodiff core, residual and attention
//! bottlenecks, the channel shuffle module over a feature pyramid, a
//! GlobalNet/RefineNet model with L2 and hard-keypoint-mined losses,
//! heatmap encoding and decoding, OKS-based evaluation, and the training
//! pipeline with checkpoints, synthetic data and a small command-line front end.

pub mod attention;
pub mod codec;
pub mod csm;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod params;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims, Graph, Tensor, Var};
