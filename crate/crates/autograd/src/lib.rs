//! Minimal reverse-mode automatic differentiation for small convolutional
//! networks on the CPU.
//!
//! The engine is deliberately narrow: NCHW tensors, the handful of layer types
//! the gaze models need, deterministic reductions, and `f32`/`f64` element
//! types so the same network can be trained fast or gradient-checked exactly.

pub mod conv;
pub mod float;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use float::Float;
pub use graph::{bce_logit, Gradients, Graph, NodeId};
pub use nn::{Conv2d, ConvTranspose2d, GroupNorm, Linear};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{stable_hash, Bound, Init, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid state: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, AutogradError>;
