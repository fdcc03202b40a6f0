use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Layout, ParamVector};
use crate::synth::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SyncSgd,
    FedAvg,
}

/// What the adversary sees in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub t: u64,
    pub theta_before: ParamVector,
    pub theta_after: ParamVector,
    pub adv_update: ParamVector,
    /// `(theta_after - theta_before) - adv_update`.
    pub g_obs: ParamVector,
}

impl RoundRecord {
    pub fn new(t: u64, theta_before: ParamVector, theta_after: ParamVector, adv_update: ParamVector) -> Result<Self> {
        let g_obs = theta_after.sub(&theta_before)?.sub(&adv_update)?;
        Ok(Self { t, theta_before, theta_after, adv_update, g_obs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateLog {
    pub protocol: Protocol,
    pub eta: f64,
    pub rounds: Vec<RoundRecord>,
}

impl UpdateLog {
    pub fn new(protocol: Protocol, eta: f64) -> Self {
        Self { protocol, eta, rounds: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn push(&mut self, record: RoundRecord) -> Result<()> {
        let expected = self.rounds.last().map_or(1, |r| r.t + 1);
        if record.t != expected {
            return Err(Error::invalid(format!("round {} appended where {expected} was expected", record.t)));
        }
        self.rounds.push(record);
        Ok(())
    }

    /// The others' aggregate in the units the attack classifier is trained on:
    /// gradient units for synchronized SGD, parameter-delta units for model averaging.
    pub fn observation(&self, index: usize) -> ParamVector {
        let g = &self.rounds[index].g_obs;
        match self.protocol {
            Protocol::SyncSgd => g.scaled(-1.0 / self.eta),
            Protocol::FedAvg => g.clone(),
        }
    }

    /// Every round satisfies the observation identity exactly and rounds are gap-free.
    pub fn verify(&self) -> Result<()> {
        for (i, r) in self.rounds.iter().enumerate() {
            if r.t != i as u64 + 1 {
                return Err(Error::invalid(format!("round numbering gap at index {i}")));
            }
            let recomputed = r.theta_after.sub(&r.theta_before)?.sub(&r.adv_update)?;
            if recomputed.to_le_bytes() != r.g_obs.to_le_bytes() {
                return Err(Error::invalid(format!("observation identity broken in round {}", r.t)));
            }
            if i > 0 && self.rounds[i - 1].theta_after != r.theta_before {
                return Err(Error::invalid(format!("round {} does not start where round {} ended", r.t, r.t - 1)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FileEntry {
    file: String,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RoundEntry {
    round: u64,
    theta_after: FileEntry,
    adv_update: FileEntry,
    g_obs: FileEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogIndex {
    protocol: Protocol,
    eta: f64,
    layout: String,
    theta_0: FileEntry,
    rounds: Vec<RoundEntry>,
}

fn write_blob(dir: &Path, name: String, v: &ParamVector) -> Result<FileEntry> {
    let bytes = v.to_le_bytes();
    fs::write(dir.join(&name), &bytes)?;
    Ok(FileEntry { sha256: sha256_hex(&bytes), file: name })
}

fn read_blob(dir: &Path, entry: &FileEntry, layout: &Arc<Layout>) -> Result<ParamVector> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path)?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(Error::Corrupt { path: path.display().to_string(), reason: "checksum mismatch".into() });
    }
    ParamVector::from_le_bytes(layout.clone(), &bytes)
}

/// Write `layout.json`, one blob per stored vector and `index.json`.
pub fn write_log(dir: &Path, log: &UpdateLog) -> Result<()> {
    let first = log.rounds.first().ok_or(Error::EmptyLog)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("layout.json"), serde_json::to_vec_pretty(&**first.theta_before.layout())?)?;
    let theta_0 = write_blob(dir, "theta_0.bin".into(), &first.theta_before)?;
    let rounds = log
        .rounds
        .iter()
        .map(|r| {
            Ok(RoundEntry {
                round: r.t,
                theta_after: write_blob(dir, format!("r{:05}.theta.bin", r.t), &r.theta_after)?,
                adv_update: write_blob(dir, format!("r{:05}.adv.bin", r.t), &r.adv_update)?,
                g_obs: write_blob(dir, format!("r{:05}.gobs.bin", r.t), &r.g_obs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = LogIndex { protocol: log.protocol, eta: log.eta, layout: "layout.json".into(), theta_0, rounds };
    fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

/// Load a log written by [`write_log`], verifying every checksum.
pub fn read_log(dir: &Path) -> Result<UpdateLog> {
    let index: LogIndex = serde_json::from_slice(&fs::read(dir.join("index.json"))?)?;
    let layout: Arc<Layout> = Arc::new(serde_json::from_slice(&fs::read(dir.join(&index.layout))?)?);
    let mut before = read_blob(dir, &index.theta_0, &layout)?;
    let mut log = UpdateLog::new(index.protocol, index.eta);
    for e in &index.rounds {
        let after = read_blob(dir, &e.theta_after, &layout)?;
        let record = RoundRecord {
            t: e.round,
            theta_before: before,
            theta_after: after.clone(),
            adv_update: read_blob(dir, &e.adv_update, &layout)?,
            g_obs: read_blob(dir, &e.g_obs, &layout)?,
        };
        log.push(record)?;
        before = after;
    }
    Ok(log)
}
