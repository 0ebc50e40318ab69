//! Minimal reverse-mode automatic differentiation over dense tensors.

mod conv;
mod graph;
mod tensor;

pub use conv::same_padding;
pub use graph::{Graph, Var};
pub use tensor::Tensor;

pub(crate) use conv::{forward as conv_forward, ConvGeom};
pub(crate) use graph::{bernoulli_kl, softplus};
