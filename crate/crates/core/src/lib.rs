//! Latent diffusion grasp generation.

pub mod batch;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod models;
pub mod numerics;
pub mod pipeline;
pub mod scalar;
pub mod vae;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor, the default training dtype.
pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type ParamStore32 = numerics::ParamStore<f32>;
pub type ParamStore64 = numerics::ParamStore<f64>;
pub type Graph32 = numerics::Graph<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type Generator32 = pipeline::Generator<f32>;
pub type Generator64 = pipeline::Generator<f64>;
