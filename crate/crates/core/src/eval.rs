//! Accuracy-vs-SNR curves, summary metrics, confusion matrices and
//! complexity reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{complexity, Complexity, ModelConfig, StageCost, Tldnn};
use crate::preprocess::ApMatrix;
use crate::scalar::Scalar;
use crate::siggen::{Dataset, Labeled, Split};

pub const DEFAULT_LOW_SNR_REF: i32 = -6;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode logits for `frames`, `batch` at a time; one row per frame.
pub fn batch_logits<T: Scalar>(model: &Tldnn<T>, frames: &[&ApMatrix], batch: usize) -> Result<Vec<Vec<f64>>> {
    let batch = batch.max(1);
    let classes = model.config.num_classes;
    let mut rows = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(batch) {
        let owned: Vec<ApMatrix> = chunk.iter().map(|&m| m.clone()).collect();
        let logits = model.logits(&owned)?;
        rows.extend(logits.data().chunks(classes).map(|r| r.iter().map(|v| v.as_f64()).collect()));
    }
    Ok(rows)
}

pub fn predict<T: Scalar>(model: &Tldnn<T>, frames: &[&ApMatrix], batch: usize) -> Result<Vec<usize>> {
    Ok(batch_logits(model, frames, batch)?.iter().map(|r| argmax(r)).collect())
}

/// One scored test frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub label: usize,
    pub predicted: usize,
    pub snr: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub per_snr_accuracy: BTreeMap<i32, f64>,
    pub per_snr_count: BTreeMap<i32, usize>,
    /// Grid SNRs without test frames; excluded from the summary metrics.
    pub missing_snrs: Vec<i32>,
    pub max_acc: f64,
    pub low_snr_ref: i32,
    pub low_snr_acc: Option<f64>,
    /// Unweighted mean over the SNRs present.
    pub avg_acc: f64,
    pub overall_acc: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub params: usize,
    pub macs: usize,
    pub stages: Vec<StageCost>,
    pub mac_convention: String,
}

const MAC_CONVENTION: &str = "one multiply-accumulate per weight connection per frame; double for FLOPs";

/// Assembles a report from scored frames over the SNR `grid`.
pub fn report_from_outcomes(
    outcomes: &[Outcome],
    class_names: &[String],
    grid: &[i32],
    low_snr_ref: i32,
    cost: &Complexity,
) -> Result<EvalReport> {
    let c = class_names.len();
    if outcomes.is_empty() {
        return Err(Error::InsufficientData("no test frames to evaluate".into()));
    }
    let mut confusion = vec![vec![0u64; c]; c];
    let mut hits: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for o in outcomes {
        if o.label >= c || o.predicted >= c {
            return Err(Error::InvalidArgument(format!("class index out of range in {o:?}")));
        }
        confusion[o.label][o.predicted] += 1;
        let e = hits.entry(o.snr).or_default();
        e.0 += (o.label == o.predicted) as usize;
        e.1 += 1;
    }
    let mut per_snr_accuracy = BTreeMap::new();
    let mut per_snr_count = BTreeMap::new();
    let mut missing_snrs = Vec::new();
    for &snr in grid {
        match hits.get(&snr) {
            Some(&(ok, n)) => {
                per_snr_accuracy.insert(snr, ok as f64 / n as f64);
                per_snr_count.insert(snr, n);
            }
            None => {
                log::warn!("no test frames at {snr} dB; excluded from averages");
                missing_snrs.push(snr);
            }
        }
    }
    if let Some(extra) = hits.keys().find(|k| !grid.contains(k)) {
        return Err(Error::InvalidArgument(format!("test frame at {extra} dB is outside the SNR grid")));
    }
    if per_snr_accuracy.is_empty() {
        return Err(Error::InsufficientData("no grid SNR has test frames".into()));
    }
    let accs: Vec<f64> = per_snr_accuracy.values().copied().collect();
    let correct: usize = hits.values().map(|h| h.0).sum();
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        max_acc: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        low_snr_acc: per_snr_accuracy.get(&low_snr_ref).copied(),
        low_snr_ref,
        avg_acc: accs.iter().sum::<f64>() / accs.len() as f64,
        overall_acc: correct as f64 / outcomes.len() as f64,
        per_snr_accuracy,
        per_snr_count,
        missing_snrs,
        confusion,
        params: cost.params,
        macs: cost.macs,
        stages: cost.stages.clone(),
        mac_convention: MAC_CONVENTION.into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub low_snr_ref: i32,
    pub split: Split,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { batch_size: 256, low_snr_ref: DEFAULT_LOW_SNR_REF, split: Split::Test }
    }
}

/// Scores one split of `dataset`; the SNR grid is every SNR in the dataset.
pub fn evaluate<T: Scalar>(model: &Tldnn<T>, dataset: &Dataset<ApMatrix>, opts: &EvalOptions) -> Result<EvalReport> {
    if dataset.class_names.len() != model.config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model predicts {}",
            dataset.class_names.len(),
            model.config.num_classes
        )));
    }
    let frames: Vec<&ApMatrix> = dataset.indices(opts.split).into_iter().map(|i| &dataset.frames[i]).collect();
    let predicted = predict(model, &frames, opts.batch_size)?;
    let outcomes: Vec<Outcome> = frames
        .iter()
        .zip(&predicted)
        .map(|(m, &p)| Outcome { label: m.label, predicted: p, snr: m.snr_key() })
        .collect();
    let grid = dataset.snr_grid();
    report_from_outcomes(&outcomes, &dataset.class_names, &grid, opts.low_snr_ref, &complexity(&model.config))
}

/// Analytic parameter and MAC counts with the per-stage breakdown.
pub fn complexity_report(config: &ModelConfig) -> Result<Complexity> {
    config.validate()?;
    Ok(complexity(config))
}

/// `b − a` per SNR and for the summary metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub per_snr_delta: BTreeMap<i32, f64>,
    pub max_delta: f64,
    pub avg_delta: f64,
    pub low_snr_delta: Option<f64>,
}

pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    let ka: Vec<i32> = a.per_snr_accuracy.keys().copied().collect();
    let kb: Vec<i32> = b.per_snr_accuracy.keys().copied().collect();
    if ka != kb {
        return Err(Error::InvalidArgument(format!("SNR grids differ: {ka:?} vs {kb:?}")));
    }
    let per_snr_delta = a
        .per_snr_accuracy
        .iter()
        .map(|(snr, &acc)| (*snr, b.per_snr_accuracy[snr] - acc))
        .collect();
    Ok(Comparison {
        per_snr_delta,
        max_delta: b.max_acc - a.max_acc,
        avg_delta: b.avg_acc - a.avg_acc,
        low_snr_delta: match (a.low_snr_acc, b.low_snr_acc) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        },
    })
}

pub fn acc_vs_snr_csv(report: &EvalReport) -> String {
    let mut s = String::from("snr_db,accuracy\n");
    for (snr, acc) in &report.per_snr_accuracy {
        s.push_str(&format!("{snr},{acc}\n"));
    }
    s
}

pub fn confusion_csv(report: &EvalReport) -> String {
    let mut s = String::new();
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Writes `report.json`, `acc_vs_snr.csv` and `confusion.csv` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(dir.join("acc_vs_snr.csv"), acc_vs_snr_csv(report))?;
    fs::write(dir.join("confusion.csv"), confusion_csv(report))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    fn cost() -> Complexity {
        complexity(&ModelConfig::default())
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[-1.0, -0.5, -2.0]), 1);
    }

    #[test]
    fn hand_counted_confusion() {
        // (label, predicted) for ten frames
        let pairs = [(0, 0), (0, 1), (1, 1), (1, 1), (2, 0), (2, 2), (2, 2), (0, 0), (1, 2), (2, 1)];
        let outcomes: Vec<Outcome> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(label, predicted))| Outcome { label, predicted, snr: if i < 5 { 0 } else { 10 } })
            .collect();
        let r = report_from_outcomes(&outcomes, &names(3), &[0, 10], -6, &cost()).unwrap();
        assert_eq!(r.confusion, vec![vec![2, 1, 0], vec![0, 2, 1], vec![1, 1, 2]]);
        assert_eq!(r.per_snr_accuracy[&0], 3.0 / 5.0);
        assert_eq!(r.per_snr_accuracy[&10], 3.0 / 5.0);
        assert_eq!(r.confusion.iter().flatten().sum::<u64>(), 10);
        assert_eq!(r.low_snr_acc, None);
        assert_eq!(r.overall_acc, 0.6);
    }

    #[test]
    fn perfect_and_permuted_classifiers() {
        let grid = [-10, 0, 10];
        let perfect: Vec<Outcome> = (0..30).map(|i| Outcome { label: i % 3, predicted: i % 3, snr: grid[i % 3] }).collect();
        let r = report_from_outcomes(&perfect, &names(3), &grid, 0, &cost()).unwrap();
        assert!(r.per_snr_accuracy.values().all(|&a| a == 1.0));
        assert_eq!(r.max_acc, 1.0);
        assert_eq!(r.low_snr_acc, Some(1.0));
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v > 0, i == j);
            }
        }
        let permuted: Vec<Outcome> = perfect.iter().map(|o| Outcome { predicted: (o.label + 1) % 3, ..*o }).collect();
        let r = report_from_outcomes(&permuted, &names(3), &grid, 0, &cost()).unwrap();
        assert_eq!(r.avg_acc, 0.0);
        assert!((0..3).all(|i| r.confusion[i][i] == 0));
    }

    #[test]
    fn constant_classifier_is_at_chance() {
        let outcomes: Vec<Outcome> = (0..400).map(|i| Outcome { label: i % 4, predicted: 2, snr: (i / 4 % 2) as i32 * 10 }).collect();
        let r = report_from_outcomes(&outcomes, &names(4), &[0, 10], -6, &cost()).unwrap();
        for &a in r.per_snr_accuracy.values() {
            assert_eq!(a, 0.25);
        }
    }

    #[test]
    fn missing_snr_is_reported_and_excluded() {
        let outcomes = vec![Outcome { label: 0, predicted: 0, snr: 0 }, Outcome { label: 1, predicted: 0, snr: 10 }];
        let r = report_from_outcomes(&outcomes, &names(2), &[-10, 0, 10], -10, &cost()).unwrap();
        assert_eq!(r.missing_snrs, vec![-10]);
        assert_eq!(r.avg_acc, 0.5);
        assert_eq!(r.low_snr_acc, None);
        let recomputed = r.per_snr_accuracy.values().sum::<f64>() / r.per_snr_accuracy.len() as f64;
        assert!((recomputed - r.avg_acc).abs() < 1e-12);
        assert!(report_from_outcomes(&outcomes, &names(2), &[0], 0, &cost()).is_err());
    }

    #[test]
    fn comparisons() {
        let outcomes: Vec<Outcome> = (0..20).map(|i| Outcome { label: i % 2, predicted: 0, snr: (i % 2) as i32 }).collect();
        let a = report_from_outcomes(&outcomes, &names(2), &[0, 1], 0, &cost()).unwrap();
        let same = compare_runs(&a, &a).unwrap();
        assert!(same.per_snr_delta.values().all(|&d| d == 0.0) && same.avg_delta == 0.0);
        let mut b = a.clone();
        for v in b.per_snr_accuracy.values_mut() {
            *v += 0.01;
        }
        b.avg_acc += 0.01;
        assert!((compare_runs(&a, &b).unwrap().avg_delta - 0.01).abs() < 1e-12);
        let mut c = a.clone();
        c.per_snr_accuracy.remove(&1);
        assert!(compare_runs(&a, &c).is_err());
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let outcomes = vec![Outcome { label: 0, predicted: 1, snr: -4 }, Outcome { label: 1, predicted: 1, snr: 2 }];
        let r = report_from_outcomes(&outcomes, &names(2), &[-4, 2], -6, &cost()).unwrap();
        write_report(dir.path(), &r).unwrap();
        assert_eq!(read_report(&dir.path().join("report.json")).unwrap(), r);
        let csv = std::fs::read_to_string(dir.path().join("acc_vs_snr.csv")).unwrap();
        assert_eq!(csv, "snr_db,accuracy\n-4,0\n2,1\n");
        let conf = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
        assert_eq!(conf, "0,1\n0,1\n");
    }
}
