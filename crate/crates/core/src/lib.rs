//! Convolutional CTC sequence labeling.
//!
//! A stack of 2D convolutions with maxout activations and frequency-only max
//! pooling, followed by time-distributed dense layers and a per-frame softmax,
//! trained end to end with the CTC loss. Every backward pass is written by
//! hand; all numeric code is generic over [`Scalar`] (`f32` or `f64`).

pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod data;
pub mod error;
pub mod features;
mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod scoring;
pub mod tensor;
pub mod train;
pub mod verify;

pub use config::NetworkConfig;
pub use ctc::{Alphabet, LabelSequence};
pub use error::{Error, Result};
pub use layers::Network;
pub use params::Parameters;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Parameters32 = Parameters<f32>;
pub type Parameters64 = Parameters<f64>;
