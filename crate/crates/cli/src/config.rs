//! Experiment configuration files and `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use amr_core::model::ModelConfig;
use amr_core::siggen::GenSpec;
use amr_core::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ConfigError;

/// One experiment. Every field is optional in the file; missing fields take
/// their defaults.
///
/// ```json
/// {
///   "data": "runs/data.sigf",
///   "generate": { "schemes": ["BPSK", "QPSK"], "frames_per_class_per_snr": 50 },
///   "model": { "lstm_layers": 2 },
///   "train": { "max_epochs": 40, "augment": { "strategy": "discrete_ss", "ratio": 0.0625 } },
///   "out_dir": "runs/full",
///   "seed": 1
/// }
/// ```
///
/// `data` names a SIGF file; without it the `generate` spec is synthesized
/// in memory. `model.num_classes` and `model.input_len` are taken from the
/// data. A top-level `seed` replaces the generation, training and
/// augmentation seeds; each component draws from its own named sub-stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub generate: GenSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: None,
            generate: GenSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            out_dir: PathBuf::from("run"),
            seed: None,
        }
    }
}

impl ExperimentConfig {
    /// Copies the top-level seed into the nested configurations.
    pub fn resolve_seeds(&mut self) {
        if let Some(seed) = self.seed {
            self.generate.seed = seed;
            self.train.seed = seed;
            self.train.augment.seed = seed;
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError(format!("train: {e}")))?;
        if self.data.is_none() {
            self.generate.validate().map_err(|e| ConfigError(format!("generate: {e}")))?;
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(ConfigError("out_dir is empty".into()));
        }
        Ok(())
    }
}

/// Reads a JSON file into `T` (defaults when `path` is `None`) and applies
/// the overrides in order.
pub fn load<T: Serialize + DeserializeOwned + Default>(path: Option<&Path>, sets: &[String]) -> Result<T, ConfigError> {
    let base: T = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
        }
        None => T::default(),
    };
    if sets.is_empty() {
        return Ok(base);
    }
    let mut value = serde_json::to_value(&base).map_err(|e| ConfigError(e.to_string()))?;
    for s in sets {
        apply_override(&mut value, s)?;
    }
    serde_json::from_value(value).map_err(|e| ConfigError(format!("after overrides: {e}")))
}

/// Applies `dotted.key=value`. The value is parsed as JSON and falls back
/// to a plain string; the key must already exist.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError(format!("override `{assignment}` has an empty key")));
    }
    let mut node = root;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| ConfigError(format!("unknown config key `{key}`")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Parses `a/b` or a decimal.
pub fn parse_ratio(s: &str) -> Result<f64, ConfigError> {
    let bad = || ConfigError(format!("ratio `{s}` is neither a fraction a/b nor a number"));
    let r = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => s.trim().parse().map_err(|_| bad())?,
    };
    if !r.is_finite() {
        return Err(bad());
    }
    Ok(r)
}
