//! Occupancy pre-training for multi-camera perception on synthetic data.
//!
//! The pipeline: [`scene`] simulates image/LiDAR sequences, [`labels`] fuses
//! and voxelizes sweeps into occupancy targets, [`view`] lifts camera
//! features into a bird's-eye-view grid, [`net`] holds the differentiable
//! model and losses, and [`train`] runs pre-training, fine-tuning,
//! evaluation and ablations.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Convolution loops index several buffers with the same channel.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod labels;
pub mod net;
pub mod scene;
pub mod tensor;
pub mod train;
pub mod view;

pub use error::{Error, Result};
pub use tensor::Tensor;
