//! Differentiable tensor core and the occupancy network.

pub mod gradcheck;
pub mod graph;
pub mod model;

pub use gradcheck::{grad_check, Coverage, GradReport};
pub use graph::{FocalLossParams, Graph, Var};
pub use model::{frame_input, Model, ModelConfig, ModelParams};
