//! Reverse-mode automatic differentiation over dense `f64` tensors, with
//! the Adam optimizer and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use graph::{Axis, Gradients, Graph, NodeId, LAYER_NORM_EPS};
pub use optim::{adam_step, lr_schedule, AdamConfig, AdamState};
pub use tensor::Tensor;
