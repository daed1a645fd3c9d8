//! Splits, loss, optimizer, learning-rate schedule and the training loop.

mod fit;
mod optim;
mod schedule;
mod split;

pub use fit::{cross_entropy, train_loop, EpochRecord, History, StopReason, TrainConfig, TrainOutcome, TrainState};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::{Plateau, PlateauConfig};
pub use split::{few_shot_subsample, stratified_split, FewShot, MIN_CELL};
