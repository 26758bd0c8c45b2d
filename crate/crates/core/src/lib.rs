//! Instruction-driven 3D scene augmentation.
//!
//! A scene of point-cloud objects and a text instruction are fused by
//! transformer encoders into a context vector. A quantized position head
//! picks where the new object goes, and a classifier-free guided diffusion
//! model samples its normalized point cloud. The crate also carries the
//! tape autodiff engine, training loop, generation metrics, a synthetic
//! scene generator and file formats.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); scene data
//! is always `f64`.

pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pointops;
pub mod position;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
