use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One realization of the propagation channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Signal-to-noise power ratio over the frame; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Carrier frequency offset in cycles per sample.
    pub cfo_norm: f64,
    /// Sampling-rate offset in parts per million.
    pub sro_ppm: f64,
    /// Multipath tap gains; empty means a flat unit channel.
    pub fading_taps: Vec<Complex64>,
    pub rng_seed: u64,
}

impl ChannelParams {
    pub fn identity() -> Self {
        ChannelParams { snr_db: f64::INFINITY, cfo_norm: 0.0, sro_ppm: 0.0, fading_taps: Vec::new(), rng_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument(format!("snr_db {} is not usable", self.snr_db)));
        }
        if !self.cfo_norm.is_finite() || !self.sro_ppm.is_finite() {
            return Err(Error::InvalidArgument("cfo_norm and sro_ppm must be finite".into()));
        }
        if !self.fading_taps.is_empty() && self.fading_taps.iter().map(|t| t.norm_sqr()).sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("fading taps have zero total power".into()));
        }
        Ok(())
    }
}

/// Passes samples through multipath, CFO rotation, SRO resampling and AWGN,
/// in that order. The output has the input's length.
pub fn apply_channel(samples: &[Complex64], ch: &ChannelParams) -> Result<Vec<Complex64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("apply_channel on an empty signal".into()));
    }
    ch.validate()?;
    let n = samples.len();
    let mut y: Vec<Complex64> = if ch.fading_taps.is_empty() {
        samples.to_vec()
    } else {
        (0..n)
            .map(|i| {
                ch.fading_taps
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k <= i)
                    .map(|(k, &h)| h * samples[i - k])
                    .sum()
            })
            .collect()
    };

    if ch.cfo_norm != 0.0 {
        for (i, z) in y.iter_mut().enumerate() {
            let turns = (ch.cfo_norm * i as f64).rem_euclid(1.0);
            *z *= Complex64::from_polar(1.0, 2.0 * PI * turns);
        }
    }

    if ch.sro_ppm != 0.0 {
        let ratio = 1.0 + ch.sro_ppm * 1e-6;
        let src = y;
        y = (0..n)
            .map(|i| {
                let t = (i as f64 * ratio).clamp(0.0, (n - 1) as f64);
                let lo = t.floor() as usize;
                let frac = t - lo as f64;
                if lo + 1 >= n || frac == 0.0 {
                    src[lo]
                } else {
                    src[lo] * (1.0 - frac) + src[lo + 1] * frac
                }
            })
            .collect();
    }

    if ch.snr_db.is_finite() {
        let power = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        let noise_power = power / 10f64.powf(ch.snr_db / 10.0);
        let sigma = (noise_power / 2.0).sqrt();
        let mut r = rng::stream(ch.rng_seed);
        for z in y.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut r);
            let im: f64 = StandardNormal.sample(&mut r);
            *z += Complex64::new(re * sigma, im * sigma);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_signal(n: usize) -> Vec<Complex64> {
        (0..n).map(|i| Complex64::from_polar(1.0, 0.37 * i as f64 + (i as f64).sin())).collect()
    }

    #[test]
    fn identity_channel_is_bit_exact() {
        let x = unit_signal(257);
        assert_eq!(apply_channel(&x, &ChannelParams::identity()).unwrap(), x);
    }

    #[test]
    fn noise_is_calibrated_to_requested_snr() {
        let x = unit_signal(100_000);
        for snr in [0.0, 10.0, -10.0] {
            let ch = ChannelParams { snr_db: snr, rng_seed: 5, ..ChannelParams::identity() };
            let y = apply_channel(&x, &ch).unwrap();
            let noise: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / x.len() as f64;
            let realized = 10.0 * (1.0 / noise).log10();
            assert!((realized - snr).abs() < 0.2, "{snr}: {realized}");
        }
    }

    #[test]
    fn cfo_rotates_dc_linearly() {
        let x = vec![Complex64::new(1.0, 0.0); 64];
        let ch = ChannelParams { cfo_norm: 0.25, ..ChannelParams::identity() };
        let y = apply_channel(&x, &ch).unwrap();
        for (n, z) in y.iter().enumerate() {
            let deg = z.arg().to_degrees().rem_euclid(360.0);
            let want = (90.0 * n as f64) % 360.0;
            let diff = (deg - want).abs().min(360.0 - (deg - want).abs());
            assert!(diff < 1e-6, "n={n}: {deg} vs {want}");
        }
        let ch = ChannelParams { cfo_norm: 0.0123, ..ChannelParams::identity() };
        let y = apply_channel(&x, &ch).unwrap();
        for w in y.windows(2) {
            let d = (w[1] / w[0]).arg();
            assert!((d - 2.0 * PI * 0.0123).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let x = unit_signal(300);
        let ch = ChannelParams {
            snr_db: 3.0,
            cfo_norm: 0.01,
            sro_ppm: 80.0,
            fading_taps: vec![Complex64::new(0.8, 0.1), Complex64::new(0.0, 0.3)],
            rng_seed: 11,
        };
        assert_eq!(apply_channel(&x, &ch).unwrap(), apply_channel(&x, &ch).unwrap());
        let other = ChannelParams { rng_seed: 12, ..ch.clone() };
        assert_ne!(apply_channel(&x, &ch).unwrap(), apply_channel(&x, &other).unwrap());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(apply_channel(&[], &ChannelParams::identity()).is_err());
        let ch = ChannelParams { fading_taps: vec![Complex64::new(0.0, 0.0)], ..ChannelParams::identity() };
        assert!(apply_channel(&unit_signal(4), &ch).is_err());
        let ch = ChannelParams { snr_db: f64::NAN, ..ChannelParams::identity() };
        assert!(apply_channel(&unit_signal(4), &ch).is_err());
    }
}
