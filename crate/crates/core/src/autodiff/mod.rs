//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! A [`Graph`] records every primitive applied to its [`Var`] handles in
//! creation order, which is already a topological order; [`Graph::backward`]
//! walks the tape once in reverse. Layout is row-major and contiguous, every
//! op materializes its output.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod ops;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::conv1d_out_len;
pub use tensor::Tensor;
