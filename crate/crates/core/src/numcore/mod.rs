//! Minimal reverse-mode differentiable tensor engine, Adam and a
//! finite-difference gradient checker.

mod adam;
mod attention;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{dense_forward, dropout, multi_head_attention, DropoutCtx};
pub use gradcheck::{grad_check, grad_check_coords, grad_check_with, relative_error, DEFAULT_STEP};
pub use graph::{huber_value, log_sigmoid, sigmoid, softplus, Graph, NodeId};
pub use params::{Param, ParamId, ParamKind, ParamSet};
pub use tensor::Tensor;
