use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{AttackKind, ScenarioConfig};
use super::run::{run_scenario, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BatchSize,
    NumParticipants,
    Alpha,
    ShareFraction,
    VocabTopN,
    DropoutP,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::NumParticipants => "num_participants",
            SweepAxis::Alpha => "alpha",
            SweepAxis::ShareFraction => "share_fraction",
            SweepAxis::VocabTopN => "vocab_top_n",
            SweepAxis::DropoutP => "dropout_p",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "batch_size" => SweepAxis::BatchSize,
            "num_participants" => SweepAxis::NumParticipants,
            "alpha" => SweepAxis::Alpha,
            "share_fraction" => SweepAxis::ShareFraction,
            "vocab_top_n" => SweepAxis::VocabTopN,
            "dropout_p" => SweepAxis::DropoutP,
            other => return Err(Error::invalid(format!("unknown sweep axis `{other}`"))),
        })
    }
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(format!("{what} must be a positive integer, got {v}")))
    }
}

fn resize<T: Clone>(v: &mut Vec<T>, k: usize) {
    if v.len() > 1 {
        let last = v.last().expect("non-empty").clone();
        v.resize(k, last);
    }
}

/// Copy of `cfg` with one axis set to `value`.
pub fn apply_axis(cfg: &ScenarioConfig, axis: SweepAxis, value: f64) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::BatchSize => c.protocol.batch_size = as_count(value, "batch_size")?,
        SweepAxis::NumParticipants => {
            let k = as_count(value, "num_participants")?;
            c.protocol.participants = k;
            resize(&mut c.synth.sizes, k);
            resize(&mut c.synth.base_rates, k);
        }
        SweepAxis::Alpha => {
            let head_eta = match c.attack.kind {
                AttackKind::ActiveProp { head_eta, .. } => head_eta,
                AttackKind::PassiveProp => None,
                _ => return Err(Error::invalid("alpha sweeps need a passive_prop or active_prop attack")),
            };
            c.attack.kind = AttackKind::ActiveProp { alpha: value, head_eta };
        }
        SweepAxis::ShareFraction => c.defense.share_fraction = value,
        SweepAxis::VocabTopN => c.defense.vocab_top_n = Some(as_count(value, "vocab_top_n")?),
        SweepAxis::DropoutP => c.defense.dropout_p = Some(value),
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

const METRICS: [&str; 6] = ["attack_auc", "attack_precision", "attack_recall", "attack_score", "timeline_gap", "main_task_auc"];

fn metric(r: &MetricsReport, i: usize) -> Option<f64> {
    match i {
        0 => r.attack_auc,
        1 => r.attack_precision,
        2 => r.attack_recall,
        3 => r.attack_score,
        4 => r.timeline_gap,
        _ => Some(r.main_task_auc),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepTable {
    /// Values in first-seen order.
    pub fn values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.value) {
                out.push(r.value);
            }
        }
        out
    }

    /// Mean and population standard deviation of a metric at one value.
    pub fn stats(&self, value: f64, name: &str) -> Option<(f64, f64)> {
        let i = METRICS.iter().position(|m| *m == name)?;
        let xs: Vec<f64> = self.rows.iter().filter(|r| r.value == value).filter_map(|r| metric(&r.report, i)).collect();
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        Some((m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()))
    }

    /// Per-run rows followed by `mean` and `std` rows per value.
    pub fn to_csv(&self) -> String {
        let mut out = format!("axis,value,seed,{}\n", METRICS.join(","));
        for r in &self.rows {
            let cells: Vec<String> = (0..METRICS.len()).map(|i| cell(metric(&r.report, i))).collect();
            writeln!(out, "{},{},{},{}", self.axis.name(), r.value, r.seed, cells.join(",")).unwrap();
        }
        for v in self.values() {
            for (label, pick) in [("mean", 0), ("std", 1)] {
                let cells: Vec<String> = METRICS
                    .iter()
                    .map(|m| cell(self.stats(v, m).map(|s| if pick == 0 { s.0 } else { s.1 })))
                    .collect();
                writeln!(out, "{},{v},{label},{}", self.axis.name(), cells.join(",")).unwrap();
            }
        }
        out
    }
}

/// One full run per (value, seed); seeds are `cfg.seed + i`. Runs write
/// under `<output_dir>/<axis>=<value>/seed=<s>` when an output dir is set.
pub fn sweep(cfg: &ScenarioConfig, axis: SweepAxis, values: &[f64], seeds: usize) -> Result<SweepTable> {
    if values.is_empty() || seeds == 0 {
        return Err(Error::invalid("a sweep needs at least one value and one seed"));
    }
    let mut jobs = Vec::new();
    for &v in values {
        let base = apply_axis(cfg, axis, v)?;
        for i in 0..seeds as u64 {
            let mut c = base.clone();
            c.seed = cfg.seed.wrapping_add(i);
            c.output_dir = cfg.output_dir.as_ref().map(|d| run_dir(d, axis, v, c.seed));
            jobs.push((v, c));
        }
    }
    let rows = jobs
        .par_iter()
        .map(|(v, c)| Ok(SweepRow { value: *v, seed: c.seed, report: run_scenario(c)? }))
        .collect::<Result<Vec<_>>>()?;
    let table = SweepTable { axis, rows };
    if let Some(d) = &cfg.output_dir {
        fs::create_dir_all(d)?;
        fs::write(d.join("sweep.csv"), table.to_csv())?;
    }
    Ok(table)
}

fn run_dir(root: &Path, axis: SweepAxis, value: f64, seed: u64) -> PathBuf {
    root.join(format!("{}={value}", axis.name())).join(format!("seed={seed}"))
}

/// Every `report.json` below `dir`, sorted by path.
pub fn collect_reports(dir: &Path) -> Result<Vec<(PathBuf, MetricsReport)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "report.json") {
                let report: MetricsReport = serde_json::from_slice(&fs::read(&path)?)?;
                out.push((path, report));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// One CSV line per report found under `dir`.
pub fn reports_csv(dir: &Path) -> Result<String> {
    let reports = collect_reports(dir)?;
    if reports.is_empty() {
        return Err(Error::InsufficientData(format!("no report.json under {}", dir.display())));
    }
    let mut out = format!("run,name,attack,{},config_hash\n", METRICS.join(","));
    for (path, r) in reports {
        let run = path.parent().and_then(|p| p.strip_prefix(dir).ok()).map(|p| p.display().to_string()).unwrap_or_default();
        let run = if run.is_empty() { ".".to_string() } else { run };
        let cells: Vec<String> = (0..METRICS.len()).map(|i| cell(metric(&r, i))).collect();
        writeln!(out, "{run},{},{},{},{}", r.name, r.attack, cells.join(","), r.config_hash).unwrap();
    }
    Ok(out)
}
