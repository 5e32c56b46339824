//! Single-thread inference, cost accounting, compression and evaluation for
//! lightweight convolutional Text2Mel networks.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod audio;
pub mod compress;
pub mod container;
pub mod emcd;
pub mod error;
pub mod gating;
pub mod graph;
pub mod nn;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = graph::Model<f32>;
pub type Model64 = graph::Model<f64>;
