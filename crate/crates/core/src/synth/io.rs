//! Binary dataset files plus a JSON manifest.
//!
//! Each participant's records go to `participant_<k>.bin`:
//!
//! ```text
//! magic "FLDS" | version u32 | mode u8 (0 dense, 1 sparse) | count u64
//! per record: label u32 | property u8 | dense: width u32, f64 * width
//!                                     | sparse: ntok u32, u32 * ntok
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch::{Input, Record};
use crate::error::{Error, Result};
use crate::synth::SynthSpec;

const MAGIC: &[u8; 4] = b"FLDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantEntry {
    pub file: String,
    pub count: usize,
    pub property_count: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: SynthSpec,
    pub participants: Vec<ParticipantEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_records(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let mode = matches!(records.first().map(|r| &r.input), Some(Input::Tokens(_))) as u8;
    out.push(mode);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.label as u32).to_le_bytes());
        out.push(r.property as u8);
        match &r.input {
            Input::Dense(x) => {
                out.extend_from_slice(&(x.len() as u32).to_le_bytes());
                x.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            Input::Tokens(t) => {
                out.extend_from_slice(&(t.len() as u32).to_le_bytes());
                t.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|s| f64::from_le_bytes(s.try_into().unwrap()))
    }
}

pub fn decode_records(bytes: &[u8]) -> Option<Vec<Record>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC || r.u32()? != VERSION {
        return None;
    }
    let sparse = r.u8()? == 1;
    let count = r.u64()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let label = r.u32()? as usize;
        let property = r.u8()? == 1;
        let n = r.u32()? as usize;
        let input = if sparse {
            Input::Tokens((0..n).map(|_| r.u32()).collect::<Option<_>>()?)
        } else {
            Input::Dense((0..n).map(|_| r.f64()).collect::<Option<_>>()?)
        };
        out.push(Record { input, label, property });
    }
    (r.pos == bytes.len()).then_some(out)
}

/// Write every participant's records and a manifest under `dir`.
pub fn write_datasets(dir: &Path, spec: &SynthSpec, datasets: &[Vec<Record>]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut participants = Vec::with_capacity(datasets.len());
    for (k, d) in datasets.iter().enumerate() {
        let bytes = encode_records(d);
        let file = format!("participant_{k}.bin");
        fs::write(dir.join(&file), &bytes)?;
        participants.push(ParticipantEntry {
            file,
            count: d.len(),
            property_count: d.iter().filter(|r| r.property).count(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = DatasetManifest { spec: spec.clone(), participants };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Load datasets written by [`write_datasets`], verifying checksums.
pub fn read_datasets(dir: &Path) -> Result<(DatasetManifest, Vec<Vec<Record>>)> {
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let mut out = Vec::with_capacity(manifest.participants.len());
    for p in &manifest.participants {
        let path = dir.join(&p.file);
        let bytes = fs::read(&path)?;
        let corrupt = |reason: &str| Error::Corrupt { path: path.display().to_string(), reason: reason.into() };
        if sha256_hex(&bytes) != p.sha256 {
            return Err(corrupt("checksum mismatch"));
        }
        let recs = decode_records(&bytes).ok_or_else(|| corrupt("malformed record stream"))?;
        if recs.len() != p.count {
            return Err(corrupt("record count differs from manifest"));
        }
        out.push(recs);
    }
    Ok((manifest, out))
}
