use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "BPSK")]
    Bpsk,
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "8PSK")]
    Psk8,
    #[serde(rename = "PAM4")]
    Pam4,
    #[serde(rename = "QAM16")]
    Qam16,
    #[serde(rename = "QAM64")]
    Qam64,
    #[serde(rename = "GFSK")]
    Gfsk,
    #[serde(rename = "CPFSK")]
    Cpfsk,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 8] = [
        SchemeKind::Bpsk,
        SchemeKind::Qpsk,
        SchemeKind::Psk8,
        SchemeKind::Pam4,
        SchemeKind::Qam16,
        SchemeKind::Qam64,
        SchemeKind::Gfsk,
        SchemeKind::Cpfsk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Bpsk => "BPSK",
            SchemeKind::Qpsk => "QPSK",
            SchemeKind::Psk8 => "8PSK",
            SchemeKind::Pam4 => "PAM4",
            SchemeKind::Qam16 => "QAM16",
            SchemeKind::Qam64 => "QAM64",
            SchemeKind::Gfsk => "GFSK",
            SchemeKind::Cpfsk => "CPFSK",
        }
    }

    pub fn is_linear(self) -> bool {
        !matches!(self, SchemeKind::Gfsk | SchemeKind::Cpfsk)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown modulation scheme {s:?}")))
    }
}

/// Pulse shape for linear schemes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Pulse {
    Rect,
    Rrc { rolloff: f64 },
}

impl Default for Pulse {
    fn default() -> Self {
        Pulse::Rrc { rolloff: 0.35 }
    }
}

/// A modulation scheme. For linear schemes `constellation[b]` is the
/// unit-average-power point for the bit group with value `b` (MSB first).
#[derive(Clone, Debug)]
pub struct ModScheme {
    pub kind: SchemeKind,
    pub bits_per_symbol: usize,
    pub constellation: Vec<Complex64>,
}

fn gray(k: usize) -> usize {
    k ^ (k >> 1)
}

/// Gray-ordered PAM levels `2k − (m−1)`, indexed by bit value.
fn pam_levels(m: usize) -> Vec<f64> {
    let mut levels = vec![0.0; m];
    for k in 0..m {
        levels[gray(k)] = 2.0 * k as f64 - (m as f64 - 1.0);
    }
    levels
}

fn psk(m: usize, offset: f64) -> Vec<Complex64> {
    let mut pts = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..m {
        pts[gray(k)] = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64 + offset);
    }
    pts
}

fn qam(bits_per_axis: usize) -> Vec<Complex64> {
    let m = 1 << bits_per_axis;
    let levels = pam_levels(m);
    let mut pts = Vec::with_capacity(m * m);
    for bi in 0..m {
        for bq in 0..m {
            pts.push(Complex64::new(levels[bi], levels[bq]));
        }
    }
    normalize(pts)
}

fn normalize(pts: Vec<Complex64>) -> Vec<Complex64> {
    let p = pts.iter().map(|z| z.norm_sqr()).sum::<f64>() / pts.len() as f64;
    let s = p.sqrt();
    pts.into_iter().map(|z| z / s).collect()
}

impl ModScheme {
    pub fn new(kind: SchemeKind) -> Self {
        let (bits, constellation) = match kind {
            SchemeKind::Bpsk => (1, psk(2, 0.0)),
            SchemeKind::Qpsk => (2, psk(4, PI / 4.0)),
            SchemeKind::Psk8 => (3, psk(8, 0.0)),
            SchemeKind::Pam4 => {
                (2, normalize(pam_levels(4).into_iter().map(|l| Complex64::new(l, 0.0)).collect()))
            }
            SchemeKind::Qam16 => (4, qam(2)),
            SchemeKind::Qam64 => (6, qam(3)),
            SchemeKind::Gfsk | SchemeKind::Cpfsk => (1, Vec::new()),
        };
        ModScheme { kind, bits_per_symbol: bits, constellation }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }
}

/// CPFSK/GFSK modulation index.
const FSK_INDEX: f64 = 0.5;
/// GFSK Gaussian filter bandwidth-time product.
const GFSK_BT: f64 = 0.35;
/// Pulse filter spans, in symbols.
const RRC_SPAN: usize = 8;
const GAUSS_SPAN: usize = 3;

/// Maps bits to complex baseband samples, `samples_per_symbol` per symbol.
pub fn modulate(bits: &[u8], scheme: &ModScheme, samples_per_symbol: usize, pulse: Pulse) -> Result<Vec<Complex64>> {
    if samples_per_symbol == 0 {
        return Err(Error::InvalidArgument("samples_per_symbol must be >= 1".into()));
    }
    let bps = scheme.bits_per_symbol;
    if bits.len() % bps != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} bits is not a multiple of {bps} bits per symbol for {}",
            bits.len(),
            scheme.kind
        )));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::InvalidArgument(format!("bit value {b} is not 0 or 1")));
    }
    let values: Vec<usize> = bits
        .chunks(bps)
        .map(|g| g.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize))
        .collect();
    let sps = samples_per_symbol;
    if scheme.kind.is_linear() {
        let symbols: Vec<Complex64> = values.iter().map(|&v| scheme.constellation[v]).collect();
        Ok(match pulse {
            Pulse::Rect => symbols.iter().flat_map(|&s| std::iter::repeat_n(s, sps)).collect(),
            Pulse::Rrc { rolloff } => {
                if !(0.0..=1.0).contains(&rolloff) || rolloff == 0.0 {
                    return Err(Error::InvalidArgument(format!("rrc rolloff {rolloff} not in (0, 1]")));
                }
                shape_symbols(&symbols, sps, &rrc_taps(rolloff, sps, RRC_SPAN))
            }
        })
    } else {
        let nrz: Vec<f64> = values.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
        let freq: Vec<f64> = match scheme.kind {
            SchemeKind::Gfsk => {
                let taps = gaussian_taps(GFSK_BT, sps, GAUSS_SPAN);
                let up: Vec<Complex64> = nrz.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let rect: Vec<Complex64> = up.iter().flat_map(|&s| std::iter::repeat_n(s, sps)).collect();
                convolve_same(&rect, &taps).into_iter().map(|z| z.re).collect()
            }
            _ => nrz.iter().flat_map(|&v| std::iter::repeat_n(v, sps)).collect(),
        };
        // Instantaneous frequency h/(2·sps) cycles/sample per unit NRZ level.
        let step = PI * FSK_INDEX / sps as f64;
        let mut phase = 0.0;
        Ok(freq
            .into_iter()
            .map(|f| {
                let s = Complex64::from_polar(1.0, phase);
                phase = (phase + step * f).rem_euclid(2.0 * PI);
                s
            })
            .collect())
    }
}

/// Root-raised-cosine taps, normalized so that `Σ h² = sps` (unit output
/// power for unit-power symbols).
fn rrc_taps(beta: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps / 2) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| {
            let t = i as f64 / sps as f64;
            if i == 0 {
                1.0 - beta + 4.0 * beta / PI
            } else if ((4.0 * beta * t).abs() - 1.0).abs() < 1e-12 {
                beta / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let s = (sps as f64 / energy).sqrt();
    taps.iter_mut().for_each(|h| *h *= s);
    taps
}

/// Gaussian frequency-pulse taps with unit DC gain.
fn gaussian_taps(bt: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps / 2) as isize;
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * bt) * sps as f64;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= sum);
    taps
}

fn shape_symbols(symbols: &[Complex64], sps: usize, taps: &[f64]) -> Vec<Complex64> {
    let mut up = vec![Complex64::new(0.0, 0.0); symbols.len() * sps];
    for (i, &s) in symbols.iter().enumerate() {
        up[i * sps] = s;
    }
    convolve_same(&up, taps)
}

/// Centered convolution with an odd-length real filter; output length equals input length.
fn convolve_same(x: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    let c = (taps.len() / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &h) in taps.iter().enumerate() {
                let j = i + c - k as isize;
                if (0..n).contains(&j) {
                    acc += x[j as usize] * h;
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constellations_have_unit_power_and_full_size() {
        for kind in SchemeKind::ALL.into_iter().filter(|k| k.is_linear()) {
            let s = ModScheme::new(kind);
            assert_eq!(s.constellation.len(), 1 << s.bits_per_symbol, "{kind}");
            let p = s.constellation.iter().map(|z| z.norm_sqr()).sum::<f64>() / s.constellation.len() as f64;
            assert!((p - 1.0).abs() < 1e-9, "{kind}: {p}");
        }
    }

    #[test]
    fn bpsk_zero_maps_to_plus_one() {
        let out = modulate(&[0], &ModScheme::new(SchemeKind::Bpsk), 1, Pulse::Rect).unwrap();
        assert_eq!(out, vec![Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn qpsk_gray_map() {
        // 00 -> 45°, 01 -> 135°, 11 -> 225°, 10 -> 315°
        let bits = [0, 0, 0, 1, 1, 1, 1, 0];
        let out = modulate(&bits, &ModScheme::new(SchemeKind::Qpsk), 1, Pulse::Rect).unwrap();
        let want = [45.0f64, 135.0, 225.0, 315.0];
        for (z, w) in out.iter().zip(want) {
            assert!((z.norm() - 1.0).abs() < 1e-12);
            let deg = z.arg().to_degrees().rem_euclid(360.0);
            assert!((deg - w).abs() < 1e-9, "{deg} vs {w}");
        }
        // neighbouring phases differ in exactly one bit
        for k in 0..4 {
            assert_eq!((gray(k) ^ gray((k + 1) % 4)).count_ones(), 1);
        }
    }

    #[test]
    fn fsk_is_constant_envelope() {
        let bits: Vec<u8> = (0..64).map(|i| ((i * 7 + 3) % 5 % 2) as u8).collect();
        for kind in [SchemeKind::Cpfsk, SchemeKind::Gfsk] {
            let out = modulate(&bits, &ModScheme::new(kind), 8, Pulse::Rect).unwrap();
            assert_eq!(out.len(), 64 * 8);
            assert!(out.iter().all(|z| (z.norm() - 1.0).abs() < 1e-9));
        }
    }

    #[test]
    fn output_length_and_errors() {
        let qam = ModScheme::new(SchemeKind::Qam16);
        let out = modulate(&[0; 16], &qam, 8, Pulse::default()).unwrap();
        assert_eq!(out.len(), 4 * 8);
        assert!(modulate(&[0; 15], &qam, 8, Pulse::Rect).is_err());
        assert!(modulate(&[0; 16], &qam, 0, Pulse::Rect).is_err());
        assert!("QAM256".parse::<SchemeKind>().is_err());
        assert_eq!("8psk".parse::<SchemeKind>().unwrap(), SchemeKind::Psk8);
    }

    #[test]
    fn rrc_shaping_has_roughly_unit_power() {
        let bits: Vec<u8> = (0..2000).map(|i| ((i * 2654435761u64 as usize) >> 7 & 1) as u8).collect();
        let out = modulate(&bits, &ModScheme::new(SchemeKind::Qpsk), 8, Pulse::default()).unwrap();
        let p = out.iter().map(|z| z.norm_sqr()).sum::<f64>() / out.len() as f64;
        assert!((p - 1.0).abs() < 0.1, "{p}");
    }
}
