use serde::{Deserialize, Serialize};

use crate::batch::{InputMode, LabeledBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Honest,
    Target,
    Adversary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: usize,
    pub role: Role,
    /// Consumed round-robin, wrapping.
    pub dataset: Vec<LabeledBatch>,
    /// Local passes per round under model averaging.
    pub local_epochs: usize,
    pub n_k: usize,
    /// First round (1-based) in which the participant contributes.
    pub joins_at: u64,
}

impl Participant {
    pub fn new(id: usize, role: Role, dataset: Vec<LabeledBatch>) -> Self {
        let n_k = dataset.iter().map(LabeledBatch::len).sum();
        Self { id, role, dataset, local_epochs: 1, n_k, joins_at: 1 }
    }

    pub fn with_local_epochs(mut self, epochs: usize) -> Self {
        self.local_epochs = epochs;
        self
    }

    pub fn joining_at(mut self, round: u64) -> Self {
        self.joins_at = round;
        self
    }

    pub fn is_active(&self, t: u64) -> bool {
        t >= self.joins_at
    }

    /// Batch used in 1-based round `t` of synchronized SGD.
    pub fn batch_for_round(&self, t: u64) -> &LabeledBatch {
        let i = (t - self.joins_at.min(t)) % self.dataset.len() as u64;
        &self.dataset[i as usize]
    }
}

/// Check roles and datasets, returning participant indices in ascending-id order.
pub fn validate_participants(participants: &[Participant], mode: InputMode) -> Result<Vec<usize>> {
    if participants.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 participants, got {}", participants.len())));
    }
    let adversaries = participants.iter().filter(|p| p.role == Role::Adversary).count();
    if adversaries != 1 {
        return Err(Error::invalid(format!("exactly one adversary required, got {adversaries}")));
    }
    if participants.iter().filter(|p| p.role == Role::Target).count() > 1 {
        return Err(Error::invalid("at most one target participant"));
    }
    for p in participants {
        if p.dataset.is_empty() {
            return Err(Error::InsufficientData(format!("participant {} has no batches", p.id)));
        }
        if let Some(b) = p.dataset.iter().find(|b| b.mode() != mode) {
            return Err(Error::ProtocolMismatch(format!(
                "participant {} batch {} is {:?} but the model expects {mode:?}",
                p.id,
                b.batch_id,
                b.mode()
            )));
        }
        if p.joins_at < 1 || (p.role == Role::Adversary && p.joins_at != 1) {
            return Err(Error::invalid(format!("participant {} has invalid join round {}", p.id, p.joins_at)));
        }
        let n: usize = p.dataset.iter().map(LabeledBatch::len).sum();
        if n != p.n_k {
            return Err(Error::invalid(format!("participant {} declares n_k={} but holds {n} examples", p.id, p.n_k)));
        }
    }
    let mut order: Vec<usize> = (0..participants.len()).collect();
    order.sort_by_key(|&i| participants[i].id);
    if order.windows(2).any(|w| participants[w[0]].id == participants[w[1]].id) {
        return Err(Error::invalid("participant ids must be unique"));
    }
    Ok(order)
}
