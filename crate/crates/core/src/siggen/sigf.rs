//! SIGF dataset files.
//!
//! ```text
//! "SIGF" | version u32 = 1 | domain u8 (0 = I/Q, 1 = A/P) | frame_count u64 | N u32 | class_count u16
//! per frame: label u16 | snr_db i16 | frame_id u64 | 2·N f32 interleaved (I,Q or A,P)
//! ```
//!
//! All integers and floats little-endian. Class names, the generation spec
//! and the split live in a sidecar `<name>.meta.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, GenSpec, IqFrame, Split};
use crate::error::{Error, Result};
use crate::preprocess::ApMatrix;

const MAGIC: &[u8; 4] = b"SIGF";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Iq = 0,
    Ap = 1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigfMeta {
    pub class_names: Vec<String>,
    pub domain: Domain,
    #[serde(default)]
    pub generation: Option<GenSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub split: BTreeMap<u64, Split>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SigfData {
    Iq(Dataset<IqFrame>),
    Ap(Dataset<ApMatrix>),
}

impl SigfData {
    pub fn len(&self) -> usize {
        match self {
            SigfData::Iq(d) => d.frames.len(),
            SigfData::Ap(d) => d.frames.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A/P view of the data, converting I/Q frames if needed.
    pub fn into_ap(self) -> Result<Dataset<ApMatrix>> {
        match self {
            SigfData::Ap(d) => Ok(d),
            SigfData::Iq(d) => d.try_map(crate::preprocess::to_input_matrix),
        }
    }
}

/// `data.sigf` → `data.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

struct Record<'a> {
    label: usize,
    snr_db: f64,
    frame_id: u64,
    values: Box<dyn Iterator<Item = f32> + 'a>,
    n: usize,
}

fn encode(domain: Domain, class_count: usize, records: Vec<Record<'_>>) -> Result<Vec<u8>> {
    let n = records.first().map_or(0, |r| r.n);
    let class_count =
        u16::try_from(class_count).map_err(|_| Error::InvalidArgument("too many classes for SIGF".into()))?;
    let n32 = u32::try_from(n).map_err(|_| Error::InvalidArgument("frame too long for SIGF".into()))?;
    let mut out = Vec::with_capacity(23 + records.len() * (12 + 8 * n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(domain as u8);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&class_count.to_le_bytes());
    for r in records {
        if r.n != n {
            return Err(Error::InvalidArgument(format!("frame {} has length {} != {n}", r.frame_id, r.n)));
        }
        let label = u16::try_from(r.label).map_err(|_| Error::InvalidArgument("label exceeds u16".into()))?;
        let snr = r.snr_db.round();
        if (snr - r.snr_db).abs() > 1e-9 || snr < i16::MIN as f64 || snr > i16::MAX as f64 {
            return Err(Error::InvalidArgument(format!("snr {} is not an i16 integer dB value", r.snr_db)));
        }
        out.extend_from_slice(&label.to_le_bytes());
        out.extend_from_slice(&(snr as i16).to_le_bytes());
        out.extend_from_slice(&r.frame_id.to_le_bytes());
        for v in r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn encode_iq(ds: &Dataset<IqFrame>) -> Result<Vec<u8>> {
    let records = ds
        .frames
        .iter()
        .map(|f| Record {
            label: f.label,
            snr_db: f.snr_db,
            frame_id: f.frame_id,
            values: Box::new(f.samples.iter().flat_map(|z| [z.re, z.im])),
            n: f.samples.len(),
        })
        .collect();
    encode(Domain::Iq, ds.class_names.len(), records)
}

pub fn encode_ap(ds: &Dataset<ApMatrix>) -> Result<Vec<u8>> {
    let records = ds
        .frames
        .iter()
        .map(|m| Record {
            label: m.label,
            snr_db: m.snr_db,
            frame_id: m.frame_id,
            values: Box::new(m.data.iter().copied()),
            n: m.len(),
        })
        .collect();
    encode(Domain::Ap, ds.class_names.len(), records)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("SIGF truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const K: usize>(&mut self) -> Result<[u8; K]> {
        Ok(self.take(K)?.try_into().expect("length checked"))
    }
}

/// Raw decoded frames: `(domain, class_count, frames)` with interleaved values.
#[allow(clippy::type_complexity)]
pub fn decode(buf: &[u8]) -> Result<(Domain, usize, Vec<(usize, f64, u64, Vec<f32>)>)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a SIGF file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SIGF version {version}")));
    }
    let domain = match c.array::<1>()?[0] {
        0 => Domain::Iq,
        1 => Domain::Ap,
        d => return Err(Error::Format(format!("unknown SIGF domain {d}"))),
    };
    let count = u64::from_le_bytes(c.array()?) as usize;
    let n = u32::from_le_bytes(c.array()?) as usize;
    let classes = u16::from_le_bytes(c.array()?) as usize;
    let mut frames = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let label = u16::from_le_bytes(c.array()?) as usize;
        let snr = i16::from_le_bytes(c.array()?) as f64;
        let id = u64::from_le_bytes(c.array()?);
        let raw = c.take(8 * n)?;
        let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        frames.push((label, snr, id, values));
    }
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes after last SIGF frame".into()));
    }
    Ok((domain, classes, frames))
}

fn write_pair(path: &Path, bytes: &[u8], meta: &SigfMeta) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    fs::write(meta_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn write_iq(path: &Path, ds: &Dataset<IqFrame>, generation: Option<&GenSpec>) -> Result<()> {
    ds.validate()?;
    let meta = SigfMeta {
        class_names: ds.class_names.clone(),
        domain: Domain::Iq,
        generation: generation.cloned(),
        seed: generation.map(|g| g.seed),
        split: ds.split.clone(),
    };
    write_pair(path, &encode_iq(ds)?, &meta)
}

pub fn write_ap(path: &Path, ds: &Dataset<ApMatrix>, generation: Option<&GenSpec>) -> Result<()> {
    ds.validate()?;
    let meta = SigfMeta {
        class_names: ds.class_names.clone(),
        domain: Domain::Ap,
        generation: generation.cloned(),
        seed: generation.map(|g| g.seed),
        split: ds.split.clone(),
    };
    write_pair(path, &encode_ap(ds)?, &meta)
}

/// Reads a SIGF file and its sidecar.
pub fn read(path: &Path) -> Result<(SigfData, SigfMeta)> {
    let bytes = fs::read(path)?;
    let meta: SigfMeta = serde_json::from_str(&fs::read_to_string(meta_path(path))?)?;
    let (domain, classes, frames) = decode(&bytes)?;
    if domain != meta.domain || classes != meta.class_names.len() {
        return Err(Error::Format("SIGF header disagrees with its meta.json".into()));
    }
    let data = match domain {
        Domain::Iq => SigfData::Iq(Dataset {
            frames: frames
                .into_iter()
                .map(|(label, snr_db, frame_id, v)| IqFrame {
                    samples: v.chunks_exact(2).map(|p| Complex32::new(p[0], p[1])).collect(),
                    label,
                    snr_db,
                    frame_id,
                })
                .collect(),
            class_names: meta.class_names.clone(),
            split: meta.split.clone(),
        }),
        Domain::Ap => SigfData::Ap(Dataset {
            frames: frames
                .into_iter()
                .map(|(label, snr_db, frame_id, data)| ApMatrix { data, label, snr_db, frame_id })
                .collect(),
            class_names: meta.class_names.clone(),
            split: meta.split.clone(),
        }),
    };
    match &data {
        SigfData::Iq(d) => d.validate()?,
        SigfData::Ap(d) => d.validate()?,
    }
    Ok((data, meta))
}
