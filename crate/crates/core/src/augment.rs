//! Segment substitution and noise-addition augmentation on A/P matrices.
//!
//! Substitution copies whole rows (amplitude and phase together) from a
//! donor frame of the same class whose SNR is lower than or equal to the
//! target's. Discrete substitution pairs two independent sorted index sets;
//! continuous substitution copies one window.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::ApMatrix;
use crate::rng::{self, StreamRng};
use crate::siggen::{Dataset, Labeled, Split};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    None,
    DiscreteSs,
    ContinuousSs,
    NoiseAdd,
}

impl Strategy {
    pub fn uses_pool(self) -> bool {
        matches!(self, Strategy::DiscreteSs | Strategy::ContinuousSs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub strategy: Strategy,
    /// Substitution ratio `r = l / N`.
    pub ratio: f64,
    /// Noise standard deviation for `noise_add`.
    pub sigma: f64,
    /// Donors kept per (class, snr) cell.
    pub pool_per_class: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { strategy: Strategy::None, ratio: 1.0 / 16.0, sigma: 1e-4, pool_per_class: 8, seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("substitution ratio {} not in (0, 1]", self.ratio)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("noise sigma {} must be finite and >= 0", self.sigma)));
        }
        if self.strategy.uses_pool() && self.pool_per_class == 0 {
            return Err(Error::Config("pool_per_class must be >= 1".into()));
        }
        Ok(())
    }

    /// `l = round(r · N)`.
    pub fn substitution_len(&self, n: usize) -> usize {
        ((self.ratio * n as f64).round() as usize).min(n)
    }
}

/// Donor frames per (class, integer snr) cell, drawn from the training split.
#[derive(Clone, Debug)]
pub struct SubstitutionPool {
    cells: BTreeMap<(usize, i32), Vec<ApMatrix>>,
    pub pool_size_per_class: usize,
}

impl SubstitutionPool {
    pub fn len(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Donors of class `label` with SNR at most `snr`.
    pub fn donors(&self, label: usize, snr: i32) -> Vec<&ApMatrix> {
        self.cells
            .range((label, i32::MIN)..=(label, snr))
            .flat_map(|(_, v)| v.iter())
            .collect()
    }

    pub fn all(&self) -> impl Iterator<Item = (&(usize, i32), &ApMatrix)> {
        self.cells.iter().flat_map(|(k, v)| v.iter().map(move |m| (k, m)))
    }
}

/// Picks `per_class` training frames from every (class, snr) cell.
pub fn build_pool(dataset: &Dataset<ApMatrix>, per_class: usize, seed: u64) -> Result<SubstitutionPool> {
    build_pool_from(dataset.indices(Split::Train).into_iter().map(|i| &dataset.frames[i]), per_class, seed)
}

/// As [`build_pool`] over an explicit set of training frames.
pub fn build_pool_from<'a>(
    frames: impl IntoIterator<Item = &'a ApMatrix>,
    per_class: usize,
    seed: u64,
) -> Result<SubstitutionPool> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be >= 1".into()));
    }
    let mut by_cell: BTreeMap<(usize, i32), Vec<&ApMatrix>> = BTreeMap::new();
    for m in frames {
        by_cell.entry((m.label, m.snr_key())).or_default().push(m);
    }
    let mut r = rng::stream(seed);
    let mut cells = BTreeMap::new();
    for ((label, snr), mut frames) in by_cell {
        if frames.len() < per_class {
            return Err(Error::InsufficientData(format!(
                "substitution pool cell (class {label}, snr {snr} dB) has {} training frames, {per_class} requested",
                frames.len()
            )));
        }
        frames.shuffle(&mut r);
        cells.insert((label, snr), frames[..per_class].iter().map(|&m| m.clone()).collect());
    }
    Ok(SubstitutionPool { cells, pool_size_per_class: per_class })
}

fn check_pair(x: &ApMatrix, donor: &ApMatrix, l: usize) -> Result<()> {
    if x.data.len() != donor.data.len() {
        return Err(Error::InvalidArgument(format!("donor length {} != target length {}", donor.len(), x.len())));
    }
    if x.label != donor.label {
        return Err(Error::InvalidArgument(format!("donor label {} != target label {}", donor.label, x.label)));
    }
    if donor.snr_db > x.snr_db {
        return Err(Error::InvalidArgument(format!(
            "donor snr {} dB exceeds target snr {} dB",
            donor.snr_db, x.snr_db
        )));
    }
    if l > x.len() {
        return Err(Error::InvalidArgument(format!("substitution length {l} > frame length {}", x.len())));
    }
    Ok(())
}

/// Replaces `l` scattered rows of `x` with `l` scattered donor rows; both
/// index sets sorted ascending and paired in order.
pub fn discrete_ss<R: Rng + ?Sized>(x: &ApMatrix, donor: &ApMatrix, l: usize, rng: &mut R) -> Result<ApMatrix> {
    check_pair(x, donor, l)?;
    let n = x.len();
    let mut targets = index::sample(rng, n, l).into_vec();
    let mut sources = index::sample(rng, n, l).into_vec();
    targets.sort_unstable();
    sources.sort_unstable();
    let mut out = x.clone();
    for (&t, &s) in targets.iter().zip(&sources) {
        out.data[2 * t..2 * t + 2].copy_from_slice(&donor.data[2 * s..2 * s + 2]);
    }
    Ok(out)
}

/// Replaces rows `i..i+l` of `x` with donor rows `j..j+l`, `i, j` uniform in `[0, N−l]`.
pub fn continuous_ss<R: Rng + ?Sized>(x: &ApMatrix, donor: &ApMatrix, l: usize, rng: &mut R) -> Result<ApMatrix> {
    check_pair(x, donor, l)?;
    let span = x.len() - l;
    let i = rng.random_range(0..=span);
    let j = rng.random_range(0..=span);
    let mut out = x.clone();
    out.data[2 * i..2 * (i + l)].copy_from_slice(&donor.data[2 * j..2 * (j + l)]);
    Ok(out)
}

/// Adds i.i.d. `N(0, σ²)` to every entry; the result is not clamped to the A/P ranges.
pub fn noise_add<R: Rng + ?Sized>(x: &ApMatrix, sigma: f64, rng: &mut R) -> Result<ApMatrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be finite and >= 0")));
    }
    let mut out = x.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for v in out.data.iter_mut() {
        *v = (*v as f64 + normal.sample(rng)) as f32;
    }
    Ok(out)
}

/// Augments every sample independently; sample `k` uses the stream
/// `derive(batch_seed, k)` and draws its own donor.
pub fn augment_batch(
    batch: &[ApMatrix],
    pool: Option<&SubstitutionPool>,
    config: &AugmentConfig,
    batch_seed: u64,
) -> Result<Vec<ApMatrix>> {
    config.validate()?;
    if config.strategy == Strategy::None {
        return Ok(batch.to_vec());
    }
    let pool = match (config.strategy.uses_pool(), pool) {
        (true, None) => return Err(Error::Config("segment substitution requires a donor pool".into())),
        (_, p) => p,
    };
    batch
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let mut r: StreamRng = rng::stream(rng::derive(batch_seed, k as u64));
            match config.strategy {
                Strategy::None => Ok(x.clone()),
                Strategy::NoiseAdd => noise_add(x, config.sigma, &mut r),
                Strategy::DiscreteSs | Strategy::ContinuousSs => {
                    let donors = pool.expect("checked above").donors(x.label, x.snr_key());
                    if donors.is_empty() {
                        return Err(Error::InsufficientData(format!(
                            "no donor for class {} at or below {} dB",
                            x.label, x.snr_db
                        )));
                    }
                    let donor = donors[r.random_range(0..donors.len())];
                    let l = config.substitution_len(x.len());
                    if config.strategy == Strategy::DiscreteSs {
                        discrete_ss(x, donor, l, &mut r)
                    } else {
                        continuous_ss(x, donor, l, &mut r)
                    }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, label: usize, snr: f64, salt: u32) -> ApMatrix {
        let data = (0..n)
            .flat_map(|i| {
                let a = ((i as u32).wrapping_mul(2654435761) ^ salt) % 1000;
                let a = a as f32 / 1000.0;
                let p = ((i as u32 + salt).wrapping_mul(40503) % 2000) as f32 / 1000.0 - 1.0;
                [a, p]
            })
            .collect();
        ApMatrix { data, label, snr_db: snr, frame_id: salt as u64 }
    }

    fn rows(m: &ApMatrix) -> Vec<[u32; 2]> {
        (0..m.len()).map(|i| m.row(i).map(f32::to_bits)).collect()
    }

    #[test]
    fn discrete_extremes() {
        let x = matrix(64, 1, 4.0, 1);
        let d = matrix(64, 1, 0.0, 2);
        let mut r = rng::stream(0);
        assert_eq!(discrete_ss(&x, &d, 0, &mut r).unwrap(), x);
        let full = discrete_ss(&x, &d, 64, &mut r).unwrap();
        let (mut a, mut b) = (rows(&full), rows(&d));
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(full.label, 1);
    }

    #[test]
    fn discrete_quarter_changes_at_most_l_rows_from_donor() {
        let x = matrix(128, 0, 10.0, 3);
        let d = matrix(128, 0, 10.0, 4);
        let out = discrete_ss(&x, &d, 32, &mut rng::stream(5)).unwrap();
        let donor_rows = rows(&d);
        let changed: Vec<usize> = (0..128).filter(|&i| out.row(i) != x.row(i)).collect();
        assert!(changed.len() <= 32 && changed.len() >= 28, "{}", changed.len());
        for i in changed {
            assert!(donor_rows.contains(&out.row(i).map(f32::to_bits)));
        }
    }

    #[test]
    fn continuous_extremes_and_window() {
        let x = matrix(128, 2, 6.0, 7);
        let d = matrix(128, 2, -2.0, 8);
        let mut r = rng::stream(1);
        assert_eq!(continuous_ss(&x, &d, 0, &mut r).unwrap(), x);
        assert_eq!(continuous_ss(&x, &d, 128, &mut r).unwrap().data, d.data);
        let out = continuous_ss(&x, &d, 8, &mut r).unwrap();
        let changed: Vec<usize> = (0..128).filter(|&i| out.row(i) != x.row(i)).collect();
        assert!(!changed.is_empty());
        assert!(changed.last().unwrap() - changed.first().unwrap() < 8);
    }

    #[test]
    fn substitution_preconditions() {
        let x = matrix(16, 0, 0.0, 1);
        let mut r = rng::stream(0);
        assert!(discrete_ss(&x, &matrix(16, 1, 0.0, 2), 2, &mut r).is_err());
        assert!(discrete_ss(&x, &matrix(16, 0, 2.0, 2), 2, &mut r).is_err());
        assert!(continuous_ss(&x, &matrix(8, 0, 0.0, 2), 2, &mut r).is_err());
        assert!(continuous_ss(&x, &matrix(16, 0, -4.0, 2), 17, &mut r).is_err());
    }

    #[test]
    fn noise_addition() {
        let x = matrix(500_000, 0, 0.0, 9);
        let mut r = rng::stream(2);
        assert_eq!(noise_add(&x, 0.0, &mut r).unwrap(), x);
        let out = noise_add(&x, 1.0, &mut r).unwrap();
        let diffs: Vec<f64> = out.data.iter().zip(&x.data).map(|(a, b)| (*a - *b) as f64).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((std - 1.0).abs() < 0.01, "{std}");
        assert_eq!(AugmentConfig::default().sigma, 1e-4);
        assert!(noise_add(&x, -1.0, &mut r).is_err());
    }

    fn pool_dataset() -> Dataset<ApMatrix> {
        let mut frames = Vec::new();
        let mut split = BTreeMap::new();
        let mut id = 0;
        for label in 0..3 {
            for snr in [-20, -10, -6, 0, 10] {
                for k in 0..4 {
                    let mut m = matrix(32, label, snr as f64, id as u32);
                    m.frame_id = id;
                    split.insert(id, if k < 3 { Split::Train } else { Split::Test });
                    frames.push(m);
                    id += 1;
                }
            }
        }
        Dataset { frames, class_names: vec!["a".into(), "b".into(), "c".into()], split }
    }

    #[test]
    fn pool_counts_determinism_and_snr_filter() {
        let ds = pool_dataset();
        let pool = build_pool(&ds, 2, 11).unwrap();
        assert_eq!(pool.len(), 30);
        let again = build_pool(&ds, 2, 11).unwrap();
        let ids = |p: &SubstitutionPool| p.all().map(|(_, m)| m.frame_id).collect::<Vec<_>>();
        assert_eq!(ids(&pool), ids(&again));
        for (_, m) in pool.all() {
            assert_eq!(ds.split[&m.frame_id], Split::Train);
        }
        let donors = pool.donors(1, -6);
        assert_eq!(donors.len(), 6);
        assert!(donors.iter().all(|d| d.snr_db <= -6.0 && d.label == 1));
        let err = build_pool(&ds, 4, 0).unwrap_err().to_string();
        assert!(err.contains("class 0") && err.contains("-20 dB"), "{err}");
    }

    #[test]
    fn batch_augmentation() {
        let ds = pool_dataset();
        let pool = build_pool(&ds, 3, 1).unwrap();
        let batch: Vec<ApMatrix> = ds.frames.iter().take(20).cloned().collect();
        let none = AugmentConfig::default();
        assert_eq!(augment_batch(&batch, None, &none, 3).unwrap(), batch);

        let cfg = AugmentConfig { strategy: Strategy::DiscreteSs, ratio: 1.0 / 8.0, ..AugmentConfig::default() };
        assert!(augment_batch(&batch, None, &cfg, 3).is_err());
        let a = augment_batch(&batch, Some(&pool), &cfg, 3).unwrap();
        let b = augment_batch(&batch, Some(&pool), &cfg, 3).unwrap();
        assert_eq!(a, b);
        for (o, x) in a.iter().zip(&batch) {
            assert_eq!(o.label, x.label);
            let changed = (0..x.len()).filter(|&i| o.row(i) != x.row(i)).count();
            assert!(changed <= 4);
        }
        assert_eq!(cfg.substitution_len(128), 16);
        assert_eq!(AugmentConfig::default().substitution_len(128), 8);
    }
}
