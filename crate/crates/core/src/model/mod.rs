//! The classifier: convolutional feature embedding with squeeze-and-excitation,
//! a talking-heads transformer encoder with ReGLU feed-forward layers, an
//! LSTM stack and a dense head on the last timestep.
//!
//! Activations are channels-last (`[batch, time, channels]`).

mod complexity;
mod config;
mod forward;
mod params;

pub use complexity::{complexity, count_macs, count_params, Complexity, StageCost};
pub use config::ModelConfig;
pub use forward::{Pass, Trace};
pub use params::{layout, Bound, Init, ParamSpec, ParamStore};

use std::path::Path;

use rand::Rng;

use crate::autodiff::{load_checkpoint, CheckpointEntry, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::preprocess::ApMatrix;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Tldnn<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

/// Result of [`Tldnn::run`].
pub struct Output<O> {
    pub value: O,
    /// Parameter handles, in [`ParamStore`] order.
    pub params: Vec<Var>,
    pub trace: Trace,
}

impl<T: Scalar> Tldnn<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&config, seed)?;
        Ok(Tldnn { config, params })
    }

    pub fn from_checkpoint(config: ModelConfig, entries: &[CheckpointEntry]) -> Result<Self> {
        let params = ParamStore::from_checkpoint(&config, entries)?;
        Ok(Tldnn { config, params })
    }

    /// Loads a checkpoint written by the training loop, whose metadata
    /// carries the model configuration under `"model"`.
    pub fn load(path: &Path) -> Result<Self> {
        let (entries, meta) = load_checkpoint(path)?;
        let config = meta
            .get("model")
            .ok_or_else(|| Error::Format(format!("{}: checkpoint metadata has no model config", path.display())))?;
        let config: ModelConfig = serde_json::from_value(config.clone())?;
        config.validate()?;
        Self::from_checkpoint(config, &entries)
    }

    /// Stacks A/P matrices into a `[B, N, 2]` tensor.
    pub fn input(&self, batch: &[ApMatrix]) -> Result<Tensor<T>> {
        let n = self.config.input_len;
        let mut data = Vec::with_capacity(batch.len() * n * 2);
        for m in batch {
            if m.len() != n {
                return Err(Error::Shape(format!("frame {} has length {}, model expects {n}", m.frame_id, m.len())));
            }
            data.extend(m.data.iter().map(|&v| T::lit(v as f64)));
        }
        Tensor::new(&[batch.len(), n, 2], data)
    }

    /// Binds the parameters into `g` and runs `f` on a fresh pass.
    pub fn run<R, O, F>(&self, g: &mut Graph<T>, train: bool, rng: &mut R, f: F) -> Result<Output<O>>
    where
        R: Rng + ?Sized,
        F: FnOnce(&mut Pass<'_, '_, T, R>) -> Result<O>,
    {
        let bound = self.params.bind(g);
        self.run_bound(g, bound, train, rng, f)
    }

    /// Like [`Tldnn::run`] with parameters already present in `g`.
    pub fn run_bound<R, O, F>(&self, g: &mut Graph<T>, bound: Bound<'_>, train: bool, rng: &mut R, f: F) -> Result<Output<O>>
    where
        R: Rng + ?Sized,
        F: FnOnce(&mut Pass<'_, '_, T, R>) -> Result<O>,
    {
        let (value, trace) = {
            let mut pass = Pass::new(g, &bound, &self.config, train, rng);
            let value = f(&mut pass)?;
            (value, pass.trace)
        };
        Ok(Output { value, params: bound.vars, trace })
    }

    /// Logits `[B, classes]` for an input node `[B, N, 2]`.
    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph<T>, x: Var, train: bool, rng: &mut R) -> Result<Output<Var>> {
        self.run(g, train, rng, |p| p.forward(x))
    }

    /// Inference-mode logits.
    pub fn logits(&self, batch: &[ApMatrix]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(self.input(batch)?);
        let mut unused = rng::stream(0);
        let out = self.forward(&mut g, x, false, &mut unused)?;
        Ok(g.value(out.value).clone())
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }
}
