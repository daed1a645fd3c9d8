use std::collections::BTreeMap;

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::channel::{apply_channel, ChannelParams};
use super::scheme::{modulate, ModScheme, Pulse, SchemeKind};
use crate::error::{Error, Result};
use crate::rng;

/// Accessors shared by I/Q frames and A/P matrices.
pub trait Labeled {
    fn label(&self) -> usize;
    fn snr_db(&self) -> f64;
    fn frame_id(&self) -> u64;

    /// Integer-dB key used to group frames into SNR cells.
    fn snr_key(&self) -> i32 {
        self.snr_db().round() as i32
    }
}

/// One received complex baseband frame.
#[derive(Clone, Debug, PartialEq)]
pub struct IqFrame {
    pub samples: Vec<Complex32>,
    pub label: usize,
    pub snr_db: f64,
    pub frame_id: u64,
}

impl IqFrame {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument(format!("frame {} is empty", self.frame_id)));
        }
        if !self.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite(format!("frame {} samples", self.frame_id)));
        }
        Ok(())
    }
}

impl Labeled for IqFrame {
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

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.6, val: 0.2, test: 0.2 }
    }
}

/// Ordered frames with class names and a train/val/test assignment per frame id.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<F = IqFrame> {
    pub frames: Vec<F>,
    pub class_names: Vec<String>,
    pub split: BTreeMap<u64, Split>,
}

impl<F: Labeled> Dataset<F> {
    pub fn validate(&self) -> Result<()> {
        let classes = self.class_names.len();
        for f in &self.frames {
            if f.label() >= classes {
                return Err(Error::InvalidArgument(format!(
                    "frame {} has label {} but only {classes} classes",
                    f.frame_id(),
                    f.label()
                )));
            }
            if !self.split.contains_key(&f.frame_id()) {
                return Err(Error::InvalidArgument(format!("frame {} has no split", f.frame_id())));
            }
        }
        if self.split.len() != self.frames.len() {
            return Err(Error::InvalidArgument("split does not cover frame ids exactly once".into()));
        }
        Ok(())
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| self.split.get(&f.frame_id()) == Some(&which))
            .map(|(i, _)| i)
            .collect()
    }

    /// Sorted distinct integer SNRs present.
    pub fn snr_grid(&self) -> Vec<i32> {
        let mut g: Vec<i32> = self.frames.iter().map(|f| f.snr_key()).collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    pub fn map<G>(&self, f: impl FnMut(&F) -> G) -> Dataset<G> {
        Dataset {
            frames: self.frames.iter().map(f).collect(),
            class_names: self.class_names.clone(),
            split: self.split.clone(),
        }
    }

    pub fn try_map<G>(&self, f: impl FnMut(&F) -> Result<G>) -> Result<Dataset<G>> {
        Ok(Dataset {
            frames: self.frames.iter().map(f).collect::<Result<_>>()?,
            class_names: self.class_names.clone(),
            split: self.split.clone(),
        })
    }
}

/// Per-frame channel parameter ranges; every draw is uniform in `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelRanges {
    pub cfo_norm: [f64; 2],
    pub sro_ppm: [f64; 2],
    /// Number of Rayleigh multipath taps (exponential power profile, unit
    /// total power). Zero gives a flat channel with unit gain.
    pub fading_taps: usize,
    /// Power decay per tap delay, linear.
    pub tap_decay: f64,
}

impl Default for ChannelRanges {
    fn default() -> Self {
        ChannelRanges { cfo_norm: [-0.001, 0.001], sro_ppm: [-50.0, 50.0], fading_taps: 1, tap_decay: 0.5 }
    }
}

/// What to generate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub schemes: Vec<SchemeKind>,
    pub snr_grid: Vec<i32>,
    pub frames_per_class_per_snr: usize,
    /// Samples per frame.
    pub n: usize,
    pub sps: usize,
    pub pulse: Pulse,
    pub channel: ChannelRanges,
    pub split: SplitRatios,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            schemes: SchemeKind::ALL.to_vec(),
            snr_grid: (-20..=18).step_by(2).collect(),
            frames_per_class_per_snr: 100,
            n: 128,
            sps: 8,
            pulse: Pulse::default(),
            channel: ChannelRanges::default(),
            split: SplitRatios::default(),
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("scheme list is empty".into()));
        }
        if self.snr_grid.is_empty() || self.frames_per_class_per_snr == 0 || self.n == 0 || self.sps == 0 {
            return Err(Error::Config("snr_grid, frames_per_class_per_snr, n and sps must be positive".into()));
        }
        if self.snr_grid.iter().any(|&s| i16::try_from(s).is_err()) {
            return Err(Error::Config("snr values must fit in i16".into()));
        }
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return Err(Error::Config("duplicate scheme in scheme list".into()));
        }
        let [c0, c1] = self.channel.cfo_norm;
        let [s0, s1] = self.channel.sro_ppm;
        if !(c0 <= c1 && s0 <= s1) || ![c0, c1, s0, s1].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("channel ranges must be finite with lo <= hi".into()));
        }
        if self.channel.fading_taps > 0 && !(self.channel.tap_decay > 0.0) {
            return Err(Error::Config("tap_decay must be positive".into()));
        }
        let r = self.split;
        if r.train <= 0.0 || r.val < 0.0 || r.test < 0.0 || ((r.train + r.val + r.test) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must be non-negative and sum to 1".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.schemes.iter().map(|k| k.name().to_string()).collect()
    }

    pub fn total_frames(&self) -> usize {
        self.schemes.len() * self.snr_grid.len() * self.frames_per_class_per_snr
    }
}

fn uniform<R: Rng>(r: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        r.random_range(lo..=hi)
    }
}

/// Synthesizes one frame from its own RNG stream.
fn generate_frame(spec: &GenSpec, scheme: &ModScheme, label: usize, snr: i32, frame_id: u64) -> Result<IqFrame> {
    let mut r = rng::stream(rng::derive(rng::derive_named(spec.seed, "gen"), frame_id));
    let margin = 8; // symbols either side for filter settling
    let n_sym = spec.n.div_ceil(spec.sps) + 2 * margin + 1;
    let bits: Vec<u8> = (0..n_sym * scheme.bits_per_symbol).map(|_| r.random_range(0..2u8)).collect();
    let wave = modulate(&bits, scheme, spec.sps, spec.pulse)?;
    let start = margin * spec.sps + r.random_range(0..spec.sps);
    let clean = &wave[start..start + spec.n];

    let ranges = &spec.channel;
    let fading_taps = if ranges.fading_taps == 0 {
        Vec::new()
    } else {
        let mut taps: Vec<Complex64> = (0..ranges.fading_taps)
            .map(|k| {
                let re: f64 = StandardNormal.sample(&mut r);
                let im: f64 = StandardNormal.sample(&mut r);
                Complex64::new(re, im) * ranges.tap_decay.powi(k as i32).sqrt()
            })
            .collect();
        let p: f64 = taps.iter().map(|t| t.norm_sqr()).sum();
        let s = p.sqrt().max(1e-12);
        taps.iter_mut().for_each(|t| *t /= s);
        taps
    };
    let ch = ChannelParams {
        snr_db: snr as f64,
        cfo_norm: uniform(&mut r, ranges.cfo_norm),
        sro_ppm: uniform(&mut r, ranges.sro_ppm),
        fading_taps,
        rng_seed: r.random(),
    };
    let received = apply_channel(clean, &ch)?;
    Ok(IqFrame {
        samples: received.iter().map(|z| Complex32::new(z.re as f32, z.im as f32)).collect(),
        label,
        snr_db: snr as f64,
        frame_id,
    })
}

/// Generates `schemes × snr_grid × frames_per_class_per_snr` frames, ordered
/// by class, then SNR, then repetition, and assigns a stratified split.
/// Frame `i` draws from the stream `derive(seed, i)` only.
pub fn generate_dataset(spec: &GenSpec) -> Result<Dataset<IqFrame>> {
    spec.validate()?;
    let mut frames = Vec::with_capacity(spec.total_frames());
    for (label, &kind) in spec.schemes.iter().enumerate() {
        let scheme = ModScheme::new(kind);
        for &snr in &spec.snr_grid {
            for _ in 0..spec.frames_per_class_per_snr {
                let id = frames.len() as u64;
                frames.push(generate_frame(spec, &scheme, label, snr, id)?);
            }
        }
    }
    let keys: Vec<(usize, i32)> = frames.iter().map(|f| (f.label, f.snr_key())).collect();
    let assignment = crate::train::stratified_split(&keys, spec.split, rng::derive_named(spec.seed, "split"))?;
    let split = frames.iter().zip(assignment).map(|(f, s)| (f.frame_id, s)).collect();
    Ok(Dataset { frames, class_names: spec.class_names(), split })
}
