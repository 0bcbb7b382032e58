//! Discrete-AIR: unsupervised decomposition of multi-object images into
//! per-object category, attribute, pose and presence codes.
//!
//! The crate is generic over the floating-point element type through
//! [`Scalar`]; the aliases below fix it to `f32` (training) or `f64`
//! (oracles, gradient checks, deterministic replays).

pub mod attention;
pub mod data;
pub mod error;
pub mod latents;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod scalar;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Gradients, Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type AffinePose32 = attention::AffinePose<f32>;
pub type AffinePose64 = attention::AffinePose<f64>;
pub type Trainer32 = train::Trainer<f32>;
pub type Trainer64 = train::Trainer<f64>;
