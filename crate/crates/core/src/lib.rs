//! Event-based semantic segmentation by unsupervised domain adaptation from
//! labelled images.
//!
//! A recurrent event encoder and reconstruction decoder are pretrained on a
//! reconstruction pretext task and then frozen. An image encoder and a task
//! decoder are trained on labelled source images while consistency losses
//! pull the image branch towards the frozen event embedding, so the task
//! decoder can be applied to event embeddings at test time.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tool.

pub mod autograd;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod evalkit;
pub mod event;
pub mod image;
pub mod kv;
pub mod losses;
pub mod models;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Training precision.
pub type Real = f32;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type VoxelGrid32 = event::VoxelGrid<f32>;
pub type VoxelGrid64 = event::VoxelGrid<f64>;
pub type Model = models::EssModel<Real>;
pub type Model64 = models::EssModel<f64>;
