//! Lightweight self-supervised monocular depth estimation on a small
//! reverse-mode autodiff engine.

pub mod bench;
pub mod config;
pub mod depth;
pub mod encoder;
pub mod error;
pub mod io;
pub mod nn;
pub mod profile;
pub mod scalar;
pub mod spectral;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
