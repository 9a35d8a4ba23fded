//! A compact reverse-mode automatic differentiation engine over dense,
//! row-major tensors.
//!
//! The engine is deliberately small: it provides exactly the operators the
//! restoration models need (convolutions with stride and dilation,
//! deformable sampling, batched matrix products, normalization, resampling)
//! and is generic over `f32` (training) and `f64` (gradient checking).
//!
//! Graphs are built eagerly. An operator records its parents and a backward
//! closure only when at least one parent requires a gradient, so inference
//! over frozen weights allocates no graph.

pub mod gradcheck;
pub mod macs;
pub mod ops;
pub mod optim;
pub mod param;
mod scalar;
mod tensor;
mod var;

pub use param::{ParamEntry, ParamId, ParamStore, Session};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use var::{Gradients, Var};
