//! Generation of minimal-distortion adversarial images against self-trained
//! MNIST classifiers, plus probing of the pixel space around original and
//! adversarial images with Gaussian and empirical noise.
//!
//! The crate is organized around a small dense-tensor core that is generic
//! over the scalar type (`f32`/`f64` via [`Scalar`]); the classifiers and the
//! experiment pipeline run on `f64`.

pub mod adversarial;
pub mod dataset;
pub mod error;
pub mod idx;
pub mod math;
pub mod model;
pub mod probing;
pub mod report;
pub mod rng;
pub mod runio;
pub mod solver;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RandomStream;
pub use tensor::Tensor;

/// Scalar trait bound for the generic numeric core.
pub use tensor::Scalar;

/// Concrete tensor aliases. The experiment pipeline uses [`Tensor64`]
/// throughout; model files narrow weights to `f32` on disk.
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
