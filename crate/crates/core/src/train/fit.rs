use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use super::schedule::{Plateau, PlateauConfig};
use super::split::{few_shot_subsample, FewShot};
use crate::augment::{augment_batch, build_pool_from, AugmentConfig};
use crate::autodiff::{save_checkpoint, Graph, Tensor};
use crate::error::{Error, Result};
use crate::eval::{argmax, batch_logits};
use crate::model::{ModelConfig, ParamStore, Tldnn};
use crate::preprocess::ApMatrix;
use crate::rng;
use crate::scalar::Scalar;
use crate::siggen::{Dataset, Labeled, Split};

/// Mean cross entropy of row-wise `logits [B, C]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.cross_entropy(l, labels)?;
    Ok(g.value(loss).item().as_f64())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    /// Training stops once the learning rate falls below this.
    pub min_lr: f64,
    pub scheduler: PlateauConfig,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub few_shot: Option<FewShot>,
    /// Validation batch size; inference only.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 150,
            initial_lr: 1e-3,
            min_lr: 1e-6,
            scheduler: PlateauConfig::default(),
            optimizer: AdamWConfig::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            few_shot: None,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr {} must be > 0", self.initial_lr)));
        }
        if !(self.min_lr >= 0.0) {
            return Err(Error::Config(format!("min_lr {} must be >= 0", self.min_lr)));
        }
        self.scheduler.validate()?;
        self.optimizer.validate()?;
        self.augment.validate()?;
        if let Some(f) = self.few_shot {
            f.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Mutable training state between epochs.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub epoch: usize,
    pub optimizer: AdamW<T>,
    pub scheduler: Plateau,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: &ParamStore<T>, cfg: &TrainConfig) -> Self {
        TrainState {
            epoch: 0,
            optimizer: AdamW::new(params.tensors(), cfg.optimizer),
            scheduler: Plateau::new(cfg.initial_lr, cfg.scheduler),
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.scheduler.lr
    }

    pub fn best_val_loss(&self) -> f64 {
        self.scheduler.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.scheduler.epochs_since_improvement
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    LearningRateFloor,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::LearningRateFloor => "learning_rate_floor",
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: History,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
    pub train_frames: usize,
}

struct Evaluation {
    loss: f64,
    acc: f64,
}

fn evaluate_frames<T: Scalar>(model: &Tldnn<T>, frames: &[&ApMatrix], batch: usize) -> Result<Evaluation> {
    let rows = batch_logits(model, frames, batch)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, m) in rows.iter().zip(frames) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[m.label];
        correct += (argmax(row) == m.label) as usize;
    }
    let n = frames.len() as f64;
    Ok(Evaluation { loss: loss / n, acc: correct as f64 / n })
}

/// Trains `model` on the train split of `data`, validating on the val split.
/// On return the model holds the parameters of the best validation epoch;
/// when `checkpoint` is given they are also written there.
pub fn train_loop<T: Scalar>(
    model: &mut Tldnn<T>,
    data: &Dataset<ApMatrix>,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.config.validate()?;
    if data.class_names.len() != model.config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model predicts {}",
            data.class_names.len(),
            model.config.num_classes
        )));
    }
    let keys: Vec<(usize, i32)> = data.frames.iter().map(|f| (f.label, f.snr_key())).collect();
    let mut train_idx = data.indices(Split::Train);
    if let Some(mode) = cfg.few_shot {
        train_idx = few_shot_subsample(&keys, &train_idx, mode, rng::derive_named(cfg.seed, "few_shot"))?;
    }
    let val: Vec<&ApMatrix> = data.indices(Split::Val).into_iter().map(|i| &data.frames[i]).collect();
    if train_idx.is_empty() || val.is_empty() {
        return Err(Error::InsufficientData(format!(
            "need non-empty train and val splits, got {} and {} frames",
            train_idx.len(),
            val.len()
        )));
    }
    let pool = if cfg.augment.strategy.uses_pool() {
        let frames = train_idx.iter().map(|&i| &data.frames[i]);
        Some(build_pool_from(frames, cfg.augment.pool_per_class, rng::derive_named(cfg.augment.seed, "pool"))?)
    } else {
        None
    };

    let shuffle_seed = rng::derive_named(cfg.seed, "shuffle");
    let dropout_seed = rng::derive_named(cfg.seed, "dropout");
    let augment_seed = rng::derive_named(cfg.augment.seed, "augment");
    let mut state = TrainState::new(&model.params, cfg);
    let mut history = History::default();
    let mut best = (0usize, f64::INFINITY, model.params.clone());
    let mut stop = StopReason::MaxEpochs;
    let mut order = train_idx.clone();

    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        let lr = state.current_lr();
        let e = epoch as u64;
        order.clone_from(&train_idx);
        order.shuffle(&mut rng::stream(rng::derive(shuffle_seed, e)));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let frames: Vec<ApMatrix> = chunk.iter().map(|&i| data.frames[i].clone()).collect();
            let batch_seed = rng::derive(rng::derive(augment_seed, e), b as u64);
            let frames = augment_batch(&frames, pool.as_ref(), &cfg.augment, batch_seed)?;
            let labels: Vec<usize> = frames.iter().map(|f| f.label).collect();
            let context = |err: Error| match err {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            };
            let mut g = Graph::new();
            let x = g.constant(model.input(&frames)?);
            let mut drop_rng = rng::stream(rng::derive(rng::derive(dropout_seed, e), b as u64));
            let out = model.forward(&mut g, x, true, &mut drop_rng).map_err(context)?;
            let loss = g.cross_entropy(out.value, &labels).map_err(context)?;
            loss_sum += g.value(loss).item().as_f64() * frames.len() as f64;
            let mut grads = g.backward(loss).map_err(context)?;
            let grads: Vec<Tensor<T>> = out
                .params
                .iter()
                .map(|&v| grads.take(v).ok_or_else(|| Error::Graph("missing parameter gradient".into())))
                .collect::<Result<_>>()?;
            state.optimizer.step(model.params.tensors_mut(), &grads, lr)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let v = evaluate_frames(model, &val, cfg.eval_batch_size)?;
        if !v.loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        history.records.push(EpochRecord { epoch, train_loss, val_loss: v.loss, val_acc: v.acc, lr });
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.4} val_loss {:.4} val_acc {:.4} lr {lr:e}",
            v.loss,
            v.acc
        );
        if v.loss < best.1 {
            best = (epoch, v.loss, model.params.clone());
            if let Some(path) = checkpoint {
                write_checkpoint(path, &model.config, &best.2, epoch, v.loss)?;
            }
        }
        let next = state.scheduler.step(v.loss);
        // tolerate the rounding of repeated multiplication by the factor
        if next < cfg.min_lr * (1.0 - 1e-9) {
            stop = StopReason::LearningRateFloor;
            break;
        }
    }
    model.params = best.2;
    Ok(TrainOutcome {
        history,
        best_epoch: best.0,
        best_val_loss: best.1,
        stop,
        train_frames: train_idx.len(),
    })
}

fn write_checkpoint<T: Scalar>(
    path: &Path,
    config: &ModelConfig,
    params: &ParamStore<T>,
    epoch: usize,
    val_loss: f64,
) -> Result<()> {
    let meta = serde_json::json!({ "epoch": epoch, "val_loss": val_loss, "model": config });
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    save_checkpoint(&tmp, &params.to_checkpoint(), &meta)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
