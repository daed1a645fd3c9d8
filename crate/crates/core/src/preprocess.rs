//! I/Q to normalized amplitude/phase conversion.
//!
//! Amplitude is min-max normalized per frame into `[0, 1]`; phase is
//! `atan2(Q, I) / π` in `[−1, 1]` and is not unwrapped.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::siggen::{IqFrame, Labeled};

/// Network input: `n × 2` row-major, column 0 amplitude, column 1 phase.
#[derive(Clone, Debug, PartialEq)]
pub struct ApMatrix {
    pub data: Vec<f32>,
    pub label: usize,
    pub snr_db: f64,
    pub frame_id: u64,
}

impl ApMatrix {
    pub fn len(&self) -> usize {
        self.data.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> [f32; 2] {
        [self.data[2 * i], self.data[2 * i + 1]]
    }

    pub fn amplitude(&self) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().step_by(2).copied()
    }

    pub fn phase(&self) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().skip(1).step_by(2).copied()
    }

    /// Checks the column range invariants.
    pub fn in_range(&self) -> bool {
        self.amplitude().all(|a| (0.0..=1.0).contains(&a)) && self.phase().all(|p| (-1.0..=1.0).contains(&p))
    }
}

impl Labeled for ApMatrix {
    fn label(&self) -> usize {
        self.label
    }
    fn snr_db(&self) -> f64 {
        self.snr_db
    }
    fn frame_id(&self) -> u64 {
        self.frame_id
    }
}

/// Amplitude `|r[n]|` and phase `atan2(Q, I)/π` of each sample.
pub fn iq_to_ap<T: Scalar>(samples: &[Complex<T>]) -> (Vec<T>, Vec<T>) {
    samples.iter().map(|z| (z.re.hypot(z.im), z.im.atan2(z.re) / T::PI())).unzip()
}

/// Min-max normalization into `[0, 1]`. A constant input maps to all zeros.
pub fn normalize_amplitude<T: Scalar>(amplitude: &[T]) -> Vec<T> {
    let (min, max) = amplitude
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    let span = max - min;
    if !(span > T::zero()) {
        return vec![T::zero(); amplitude.len()];
    }
    amplitude.iter().map(|&a| ((a - min) / span).min(T::one()).max(T::zero())).collect()
}

/// Builds the `n × 2` input matrix of a frame.
pub fn to_input_matrix(frame: &IqFrame) -> Result<ApMatrix> {
    frame.validate()?;
    let wide: Vec<Complex<f64>> = frame.samples.iter().map(|z| Complex::new(z.re as f64, z.im as f64)).collect();
    let (amp, phase) = iq_to_ap(&wide);
    let amp = normalize_amplitude(&amp);
    let mut data = Vec::with_capacity(2 * amp.len());
    for (a, p) in amp.into_iter().zip(phase) {
        data.push(a as f32);
        data.push(p as f32);
    }
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("A/P matrix of frame {}", frame.frame_id)));
    }
    Ok(ApMatrix { data, label: frame.label, snr_db: frame.snr_db, frame_id: frame.frame_id })
}
