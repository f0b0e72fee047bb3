//! Lightweight skeletal human-motion forecasting.
//!
//! A Graph-WaveNet-style forecaster over kinematic trees: spatio-temporal
//! causal convolutions along 3-joint chains, a three-subgraph graph
//! convolution, autoregressive decoding over unit quaternions, and the
//! standard Euler-angle evaluation protocol with bit-reproducible sample
//! drawing.
//!
//! Core math is generic over a [`num::Scalar`] float type; the concrete
//! `f64` aliases below are what the model pipeline uses.

pub mod error;
pub mod num;
pub mod quat;
pub mod rng;
pub mod skeleton;
pub mod tape;
pub mod tensor;

pub mod data;
pub mod eval;
pub mod model;
pub mod training;

pub mod cli;

pub use error::{Error, Result};
pub use num::Scalar;

/// Concrete scalar type of the shipped pipeline.
pub type Real = f64;
pub type Tensor64 = tensor::Tensor<Real>;
pub type Tape64 = tape::Tape<Real>;
pub type Quat64 = quat::Quaternion<Real>;
