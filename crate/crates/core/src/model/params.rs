use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::autodiff::{CheckpointEntry, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `±1/√fan_in`.
    Uniform { fan_in: usize },
    Normal { std: f64 },
    Ones,
    Zeros,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn dense(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    let init = Init::Uniform { fan_in };
    out.push(ParamSpec { name: format!("{prefix}.weight"), shape: vec![fan_in, fan_out], init });
    out.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![fan_out], init });
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(ParamSpec { name: format!("{prefix}.gain"), shape: vec![d], init: Init::Ones });
    out.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![d], init: Init::Zeros });
}

/// Every trainable tensor of the configuration, in a fixed order.
pub fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.embed_dim;
    let mut out = Vec::new();
    for i in 0..cfg.conv_layers {
        let c_in = if i == 0 { 2 } else { d };
        let init = Init::Uniform { fan_in: c_in * cfg.kernel_size };
        out.push(ParamSpec { name: format!("embed.conv{i}.weight"), shape: vec![d, c_in, cfg.kernel_size], init });
        out.push(ParamSpec { name: format!("embed.conv{i}.bias"), shape: vec![d], init });
    }
    if cfg.use_se {
        let r = d / cfg.se_reduction;
        dense(&mut out, "se.fc1", d, r);
        dense(&mut out, "se.fc2", r, d);
    }
    if cfg.use_transformer {
        out.push(ParamSpec {
            name: "encoder.pos".into(),
            shape: vec![cfg.seq_len(), d],
            init: Init::Normal { std: 0.02 },
        });
        for l in 0..cfg.transformer_layers {
            let p = format!("encoder.layer{l}");
            for w in ["query", "key", "value", "out"] {
                dense(&mut out, &format!("{p}.attn.{w}"), d, d);
            }
            if cfg.use_talking_heads {
                for w in ["mix_logits", "mix_weights"] {
                    out.push(ParamSpec {
                        name: format!("{p}.attn.{w}"),
                        shape: vec![cfg.heads, cfg.heads],
                        init: Init::Identity,
                    });
                }
            }
            norm(&mut out, &format!("{p}.norm1"), d);
            if cfg.use_reglu {
                dense(&mut out, &format!("{p}.ffn.gate"), d, cfg.ffn_dim);
                dense(&mut out, &format!("{p}.ffn.value"), d, cfg.ffn_dim);
                dense(&mut out, &format!("{p}.ffn.out"), cfg.ffn_dim, d);
            } else {
                dense(&mut out, &format!("{p}.ffn.fc1"), d, cfg.mlp_hidden());
                dense(&mut out, &format!("{p}.ffn.fc2"), cfg.mlp_hidden(), d);
            }
            norm(&mut out, &format!("{p}.norm2"), d);
        }
    }
    if cfg.use_lstm {
        let h = cfg.lstm_hidden;
        for l in 0..cfg.lstm_layers {
            let d_in = if l == 0 { d } else { h };
            let init = Init::Uniform { fan_in: h };
            let p = format!("lstm.layer{l}");
            let init_ih = Init::Uniform { fan_in: d_in };
            out.push(ParamSpec { name: format!("{p}.w_ih"), shape: vec![d_in, 4 * h], init: init_ih });
            out.push(ParamSpec { name: format!("{p}.w_hh"), shape: vec![h, 4 * h], init });
            out.push(ParamSpec { name: format!("{p}.b_ih"), shape: vec![4 * h], init });
            out.push(ParamSpec { name: format!("{p}.b_hh"), shape: vec![4 * h], init });
        }
    }
    let mut width = cfg.head_input();
    for (i, &w) in cfg.classifier_hidden.iter().chain([&cfg.num_classes]).enumerate() {
        dense(&mut out, &format!("head.fc{i}"), width, w);
        width = w;
    }
    out
}

/// Named parameter tensors of one model instance.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

fn init_tensor<T: Scalar, R: Rng + ?Sized>(spec: &ParamSpec, rng: &mut R) -> Tensor<T> {
    let n = spec.numel();
    let data: Vec<T> = match spec.init {
        Init::Uniform { fan_in } => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect()
        }
        Init::Normal { std } => {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| T::lit(dist.sample(rng))).collect()
        }
        Init::Ones => vec![T::one(); n],
        Init::Zeros => vec![T::zero(); n],
        Init::Identity => {
            let k = spec.shape[0];
            (0..n).map(|i| if i / k == i % k { T::one() } else { T::zero() }).collect()
        }
    };
    Tensor::new(&spec.shape, data).expect("layout shapes are consistent")
}

impl<T: Scalar> ParamStore<T> {
    /// Fresh parameters drawn from the `init` stream of `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let specs = layout(cfg);
        let mut r = rng::named_stream(seed, "init");
        let tensors = specs.iter().map(|s| init_tensor(s, &mut r)).collect();
        Ok(Self::assemble(specs, tensors))
    }

    fn assemble(specs: Vec<ParamSpec>, tensors: Vec<Tensor<T>>) -> Self {
        let index = specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        ParamStore { specs, tensors, index }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    /// Replaces one tensor, keeping its shape.
    pub fn set(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        let slot = self
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        if slot.shape() != t.shape() {
            return Err(Error::Shape(format!("parameter {name}: {:?} != {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
        Ok(())
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Inserts every parameter into `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        Bound { vars, index: &self.index }
    }

    /// Wraps existing graph handles, one per parameter in store order.
    pub fn bound(&self, vars: Vec<Var>) -> Result<Bound<'_>> {
        if vars.len() != self.tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter handles for {} parameters",
                vars.len(),
                self.tensors.len()
            )));
        }
        Ok(Bound { vars, index: &self.index })
    }

    pub fn to_checkpoint(&self) -> Vec<CheckpointEntry> {
        self.specs
            .iter()
            .zip(&self.tensors)
            .map(|(s, t)| CheckpointEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
                data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect()
    }

    /// Rebuilds parameters for `cfg` from checkpoint entries; names and
    /// shapes must match the configuration exactly.
    pub fn from_checkpoint(cfg: &ModelConfig, entries: &[CheckpointEntry]) -> Result<Self> {
        cfg.validate()?;
        let specs = layout(cfg);
        if entries.len() != specs.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, configuration needs {}",
                entries.len(),
                specs.len()
            )));
        }
        let by_name: HashMap<&str, &CheckpointEntry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
        let mut tensors = Vec::with_capacity(specs.len());
        for s in &specs {
            let e = by_name
                .get(s.name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {}", s.name)))?;
            if e.shape != s.shape {
                return Err(Error::Format(format!("parameter {}: checkpoint shape {:?}, expected {:?}", s.name, e.shape, s.shape)));
            }
            tensors.push(Tensor::new(&s.shape, e.data.iter().map(|&v| T::lit(v as f64)).collect())?);
        }
        Ok(Self::assemble(specs, tensors))
    }
}

/// Graph handles for the parameters of one forward pass.
pub struct Bound<'a> {
    pub vars: Vec<Var>,
    index: &'a HashMap<String, usize>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("parameter {name} missing for this configuration")))
    }
}
