use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::siggen::{Split, SplitRatios};

/// Smallest (label, snr) cell that can be split.
pub const MIN_CELL: usize = 5;

fn cells(keys: &[(usize, i32)], subset: impl IntoIterator<Item = usize>) -> BTreeMap<(usize, i32), Vec<usize>> {
    let mut map: BTreeMap<(usize, i32), Vec<usize>> = BTreeMap::new();
    for i in subset {
        map.entry(keys[i]).or_default().push(i);
    }
    map
}

/// Stratified shuffle split: every (label, snr) cell is shuffled and cut by
/// `ratios`, rounding train and val counts to the nearest frame.
pub fn stratified_split(keys: &[(usize, i32)], ratios: SplitRatios, seed: u64) -> Result<Vec<Split>> {
    let mut out = vec![Split::Train; keys.len()];
    let mut r = rng::stream(seed);
    for ((label, snr), mut idx) in cells(keys, 0..keys.len()) {
        if idx.len() < MIN_CELL {
            return Err(Error::InsufficientData(format!(
                "cell (label {label}, snr {snr} dB) has {} frames, need at least {MIN_CELL}",
                idx.len()
            )));
        }
        idx.shuffle(&mut r);
        let n = idx.len() as f64;
        let n_train = (n * ratios.train).round() as usize;
        let n_val = ((n * ratios.val).round() as usize).min(idx.len() - n_train);
        for (k, &i) in idx.iter().enumerate() {
            out[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// How much of each training cell to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewShot {
    /// Keep `max(1, round(η·n))` frames of each cell.
    Fraction(f64),
    /// Keep exactly this many frames of each cell.
    PerCell(usize),
}

impl FewShot {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FewShot::Fraction(eta) if !(eta > 0.0 && eta <= 1.0) => {
                Err(Error::Config(format!("few-shot fraction {eta} not in (0, 1]")))
            }
            FewShot::PerCell(0) => Err(Error::Config("few-shot per-cell count must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

/// Stratified subsample of `train` (indices into `keys`). Output is sorted.
pub fn few_shot_subsample(keys: &[(usize, i32)], train: &[usize], mode: FewShot, seed: u64) -> Result<Vec<usize>> {
    mode.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("few-shot subsample of an empty training split".into()));
    }
    if mode == FewShot::Fraction(1.0) {
        let mut all = train.to_vec();
        all.sort_unstable();
        return Ok(all);
    }
    let mut r = rng::stream(seed);
    let mut keep = Vec::new();
    for ((label, snr), mut idx) in cells(keys, train.iter().copied()) {
        let k = match mode {
            FewShot::Fraction(eta) => ((idx.len() as f64 * eta).round() as usize).max(1),
            FewShot::PerCell(k) => {
                if idx.len() < k {
                    return Err(Error::InsufficientData(format!(
                        "cell (label {label}, snr {snr} dB) has {} training frames, {k} requested",
                        idx.len()
                    )));
                }
                k
            }
        };
        idx.shuffle(&mut r);
        keep.extend_from_slice(&idx[..k]);
    }
    keep.sort_unstable();
    Ok(keep)
}
