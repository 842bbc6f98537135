//! Deterministic tensor engine: dense tensors, a recording tape with
//! reverse-mode differentiation, Adam, cosine learning-rate annealing and a
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
pub mod init;
mod kernels;
mod optim;
mod params;
mod scalar;
mod schedule;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, Stencil};
pub use graph::{sigmoid, Gradients, Graph, Segment, Var};
pub use optim::Adam;
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use schedule::{cosine_lr, LrSchedule};
pub use tensor::Tensor;
