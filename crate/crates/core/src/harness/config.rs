use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ClassifierConfig, ModelSpec};
use crate::protocol::DefenseConfig;
use crate::synth::{BatchSchedule, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    SyncSgd,
    FedAvg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    pub eta: f64,
    pub rounds: u64,
    /// K, including the adversary (participant 0) and the target (participant 1).
    pub participants: usize,
    pub batch_size: usize,
    #[serde(default = "one")]
    pub local_epochs: usize,
    /// Model averaging only: local batches per participant.
    #[serde(default = "one")]
    pub batches_per_epoch: usize,
    /// Round in which the target starts contributing.
    #[serde(default)]
    pub target_joins_at: Option<u64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Membership,
    PassiveProp,
    ActiveProp {
        alpha: f64,
        /// Learning rate of the local property head; defaults to the protocol's.
        #[serde(default)]
        head_eta: Option<f64>,
    },
    FedavgProp {
        /// Adversary's assumed property share of the target's data.
        prop_fraction: f64,
    },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Membership => "membership",
            AttackKind::PassiveProp => "passive_prop",
            AttackKind::ActiveProp { .. } => "active_prop",
            AttackKind::FedavgProp { .. } => "fedavg_prop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    #[serde(flatten)]
    pub kind: AttackKind,
    #[serde(default = "default_pool")]
    pub pool_window: usize,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default = "default_smoothing")]
    pub smoothing_window: usize,
    /// Property share of the adversary's shadow property batches.
    #[serde(default = "unit")]
    pub shadow_prop_fraction: f64,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
}

fn default_pool() -> usize {
    crate::attack::DEFAULT_POOL_WINDOW
}

fn default_smoothing() -> usize {
    20
}

fn unit() -> f64 {
    1.0
}

fn default_zero_tol() -> f64 {
    crate::attack::DEFAULT_ZERO_TOL
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            pool_window: default_pool(),
            classifier: ClassifierConfig::default(),
            smoothing_window: default_smoothing(),
            shadow_prop_fraction: 1.0,
            zero_tol: default_zero_tol(),
        }
    }
}

/// Everything needed to reproduce one run. The nested `synth.seed` and
/// `model.seed` are replaced by streams derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub synth: SynthSpec,
    pub model: ModelSpec,
    pub protocol: ProtocolConfig,
    /// Target's property schedule; without one the target's pool is split
    /// into consecutive batches.
    #[serde(default)]
    pub schedule: Option<BatchSchedule>,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub write_update_log: bool,
}

fn yes() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Per-participant sizes, broadcasting a single entry to all K.
    pub fn participant_sizes(&self) -> Result<Vec<usize>> {
        let k = self.protocol.participants;
        match self.synth.sizes.len() {
            1 => Ok(vec![self.synth.sizes[0]; k]),
            n if n == k => Ok(self.synth.sizes.clone()),
            n => Err(Error::invalid(format!("synth.sizes has {n} entries for {k} participants"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        if p.participants < 2 {
            return Err(Error::invalid("K must be at least 2"));
        }
        if p.batch_size == 0 || p.rounds == 0 || p.local_epochs == 0 || p.batches_per_epoch == 0 {
            return Err(Error::invalid("batch_size, rounds, local_epochs and batches_per_epoch must be positive"));
        }
        if !(p.eta.is_finite() && p.eta > 0.0) {
            return Err(Error::invalid("eta must be positive"));
        }
        if p.target_joins_at.is_some_and(|j| j < 1 || j > p.rounds) {
            return Err(Error::invalid("target_joins_at must lie in 1..=rounds"));
        }
        let sizes = self.participant_sizes()?;
        if self.synth.base_rates.len() != 1 && self.synth.base_rates.len() != p.participants {
            return Err(Error::invalid("synth.base_rates needs one entry or one per participant"));
        }
        let mut synth = self.synth.clone();
        synth.sizes = sizes;
        synth.validate()?;
        self.model.validate()?;
        if self.model.input_mode() != synth.input_mode() || self.model.input_width() != synth.input_width() {
            return Err(Error::invalid("model input does not match the synthetic data"));
        }
        if self.model.num_classes() != synth.num_classes {
            return Err(Error::invalid("model output width must equal num_classes"));
        }
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        self.defense.validate()?;
        let a = &self.attack;
        if a.pool_window == 0 || a.smoothing_window == 0 {
            return Err(Error::invalid("pool_window and smoothing_window must be positive"));
        }
        if !(a.shadow_prop_fraction > 0.0 && a.shadow_prop_fraction <= 1.0) {
            return Err(Error::invalid("shadow_prop_fraction outside (0,1]"));
        }
        match a.kind {
            AttackKind::Membership if self.model.embedding_segment().is_none() => {
                Err(Error::invalid("membership inference needs an embedding-bag model"))
            }
            AttackKind::ActiveProp { alpha, .. } if !(0.0..=1.0).contains(&alpha) => {
                Err(Error::invalid(format!("alpha={alpha} outside [0,1]")))
            }
            AttackKind::ActiveProp { .. } | AttackKind::PassiveProp if p.kind != ProtocolKind::SyncSgd => {
                Err(Error::invalid("passive/active property attacks run against synchronized SGD"))
            }
            AttackKind::FedavgProp { .. } if p.kind != ProtocolKind::FedAvg => {
                Err(Error::invalid("fedavg_prop needs the fed_avg protocol"))
            }
            AttackKind::FedavgProp { prop_fraction } if !(0.0..=1.0).contains(&prop_fraction) => {
                Err(Error::invalid("prop_fraction outside [0,1]"))
            }
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 of the canonical JSON, excluding `output_dir`.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        crate::synth::sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}
