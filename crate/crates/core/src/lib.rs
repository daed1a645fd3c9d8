//! Modulation recognition toolkit.
//!
//! The crate is organised bottom-up:
//!
//! ```text
//! siggen      synthetic modulated frames through a parametric channel, SIGF files
//! preprocess  I/Q -> normalized amplitude/phase matrix
//! augment     segment substitution (discrete, continuous) and noise addition
//! autodiff    dense tensors with reverse-mode differentiation
//! model       feature embedding + SE, talking-heads transformer, LSTM stack, classifier
//! train       splits, cross entropy, AdamW, plateau scheduling, training loop
//! eval        accuracy-vs-SNR, confusion matrices, complexity reports
//! ```
//!
//! The numerical core (`autodiff`, `model`, `train::optim`) is generic over
//! [`Scalar`]; training runs in `f32` and gradient checks in `f64`. The aliases
//! below name the two concrete instantiations.

pub mod augment;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod scalar;
pub mod siggen;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor used for training.
pub type Tensor32 = autodiff::Tensor<f32>;
/// Double-precision tensor used for gradient checks.
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Model32 = model::Tldnn<f32>;
pub type Model64 = model::Tldnn<f64>;
pub type AdamW32 = train::AdamW<f32>;
pub type AdamW64 = train::AdamW<f64>;
