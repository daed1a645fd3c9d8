//! Parameter checkpoint file.
//!
//! ```text
//! magic  "AMRC"          4 bytes
//! version u32 = 1
//! header_len u64
//! header  JSON           {"tensors": [{"name", "shape", "offset", "len"}...], "metadata": any}
//! data    f32 × Σ len    little-endian, tensors in header order, offsets in elements
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AMRC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<IndexEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, entries: &[CheckpointEntry], metadata: &serde_json::Value) -> Result<()> {
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(entries.len());
    for e in entries {
        let n: usize = e.shape.iter().product();
        if n != e.data.len() {
            return Err(Error::Shape(format!("checkpoint entry {} shape {:?} vs {} values", e.name, e.shape, e.data.len())));
        }
        tensors.push(IndexEntry { name: e.name.clone(), shape: e.shape.clone(), offset, len: n });
        offset += n;
    }
    let header = serde_json::to_vec(&Header { tensors, metadata: metadata.clone() })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for e in entries {
        for v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Vec<CheckpointEntry>, serde_json::Value)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let hlen = u64::from_le_bytes(b8) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: Header = serde_json::from_slice(&hbuf)?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() % 4 != 0 {
        return Err(Error::Format("checkpoint payload is not a whole number of f32".into()));
    }
    let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut entries = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        if n != t.len || t.offset + t.len > values.len() {
            return Err(Error::Format(format!("checkpoint entry {} out of bounds", t.name)));
        }
        entries.push(CheckpointEntry { name: t.name, shape: t.shape, data: values[t.offset..t.offset + t.len].to_vec() });
    }
    Ok((entries, header.metadata))
}

pub fn save_checkpoint(path: &Path, entries: &[CheckpointEntry], metadata: &serde_json::Value) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), entries, metadata)
}

pub fn load_checkpoint(path: &Path) -> Result<(Vec<CheckpointEntry>, serde_json::Value)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
