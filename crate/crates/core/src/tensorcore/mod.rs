//! Minimal float64 reverse-mode autodiff engine.
//!
//! Provides exactly the operators the mask, attenuation and grid-detector
//! networks need. There is no broadcasting: every operator checks its input
//! shapes and reports the operator name with expected and actual dims.

pub mod gradcheck;
pub mod kernels;
mod memory;
mod optim;
mod tape;
mod tensor;

pub use memory::estimate_memory;
pub use optim::{zero_grad, OptimizerKind, OptimizerState};
pub use tape::{sigmoid, Tape, Var, BCE_EPS};
pub use tensor::{fmt_shape, Result, Tensor, TensorError};
