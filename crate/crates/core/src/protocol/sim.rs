use rayon::prelude::*;

use crate::batch::LabeledBatch;
use crate::error::{Error, Result};
use crate::nn::{DropoutMode, Network};
use crate::params::{weighted_sum, ParamVector};
use crate::rng::derive_seed;

use super::defense::DefenseConfig;
use super::log::{Protocol, RoundRecord, UpdateLog};
use super::participant::{validate_participants, Participant, Role};

/// Inputs the adversary has when computing its own contribution.
pub struct AdversaryView<'a> {
    pub net: &'a Network,
    pub params: &'a ParamVector,
    pub batch: &'a LabeledBatch,
    pub round: u64,
    pub dropout: DropoutMode,
}

/// Produces the gradient the adversary uploads for one batch.
pub trait AdversaryStrategy {
    fn gradient(&mut self, view: AdversaryView<'_>) -> Result<ParamVector>;
}

/// Behaves exactly like an honest participant.
#[derive(Debug, Default, Clone, Copy)]
pub struct PassiveAdversary;

impl AdversaryStrategy for PassiveAdversary {
    fn gradient(&mut self, v: AdversaryView<'_>) -> Result<ParamVector> {
        Ok(v.net.forward_backward(v.params, v.batch, v.dropout)?.1)
    }
}

/// Uploads nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct SilentAdversary;

impl AdversaryStrategy for SilentAdversary {
    fn gradient(&mut self, v: AdversaryView<'_>) -> Result<ParamVector> {
        Ok(v.params.zeros_like())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub eta: f64,
    pub rounds: u64,
    pub defense: DefenseConfig,
    /// Root of per-(participant, round, ...) dropout and random-subset seeds.
    pub seed: u64,
    /// Model-averaging client fraction; only 1 is supported.
    pub client_fraction: f64,
    /// Keep every participant's (masked) upload for inspection.
    pub record_trace: bool,
}

impl SimConfig {
    pub fn new(eta: f64, rounds: u64) -> Self {
        Self { eta, rounds, defense: DefenseConfig::default(), seed: 0, client_fraction: 1.0, record_trace: false }
    }

    fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::invalid("at least one round is required"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.eta)));
        }
        self.defense.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub final_params: ParamVector,
    pub log: UpdateLog,
    /// Per round, `(participant id, upload)` in aggregation order, when requested.
    /// Uploads are gradients for synchronized SGD and model deltas for averaging.
    pub trace: Option<Vec<Vec<(usize, ParamVector)>>>,
}

fn local_gradient(
    net: &Network,
    params: &ParamVector,
    batch: &LabeledBatch,
    dropout: DropoutMode,
) -> Result<ParamVector> {
    Ok(net.forward_backward(params, batch, dropout)?.1)
}

/// Synchronized SGD: every round the server applies the sum of all uploads.
pub fn run_sync_sgd(
    participants: &[Participant],
    net: &Network,
    init: &ParamVector,
    cfg: &SimConfig,
    adversary: &mut dyn AdversaryStrategy,
) -> Result<SimOutput> {
    cfg.validate()?;
    let order = validate_participants(participants, net.spec().input_mode())?;
    if !init.layout().as_ref().eq(net.layout().as_ref()) {
        return Err(Error::ShapeMismatch("initial parameters do not match the model".into()));
    }
    let mut theta = init.clone();
    let mut log = UpdateLog::new(Protocol::SyncSgd, cfg.eta);
    let mut trace = cfg.record_trace.then(Vec::new);
    for t in 1..=cfg.rounds {
        let mut uploads = Vec::with_capacity(order.len());
        let mut ids = Vec::with_capacity(order.len());
        let mut adv_index = 0;
        for &i in &order {
            let p = &participants[i];
            if !p.is_active(t) {
                continue;
            }
            let id = p.id as u64;
            let batch = p.batch_for_round(t);
            let dropout = DropoutMode::Train { seed: derive_seed(cfg.seed, "dropout", &[id, t]) };
            let g = if p.role == Role::Adversary {
                adv_index = uploads.len();
                adversary.gradient(AdversaryView { net, params: &theta, batch, round: t, dropout })?
            } else {
                local_gradient(net, &theta, batch, dropout)?
            };
            uploads.push(cfg.defense.mask(g, derive_seed(cfg.seed, "share", &[id, t]))?);
            ids.push(p.id);
        }
        let mut total = theta.zeros_like();
        for u in &uploads {
            total.add_assign(u)?;
        }
        let before = theta;
        theta = before.zip_with(&total, |p, g| p - cfg.eta * g)?;
        let adv_update = uploads[adv_index].scaled(-cfg.eta);
        log.push(RoundRecord::new(t, before, theta.clone(), adv_update)?)?;
        if let Some(tr) = trace.as_mut() {
            tr.push(ids.into_iter().zip(uploads).collect());
        }
    }
    Ok(SimOutput { final_params: theta, log, trace })
}

/// Model averaging: each participant trains locally, the server averages
/// the resulting models weighted by example counts.
pub fn run_fed_avg(
    participants: &[Participant],
    net: &Network,
    init: &ParamVector,
    cfg: &SimConfig,
    adversary: &mut dyn AdversaryStrategy,
) -> Result<SimOutput> {
    cfg.validate()?;
    if cfg.client_fraction != 1.0 {
        return Err(Error::invalid(format!("client fraction {} is not supported; only 1", cfg.client_fraction)));
    }
    let order = validate_participants(participants, net.spec().input_mode())?;
    if let Some(p) = participants.iter().find(|p| p.local_epochs == 0) {
        return Err(Error::invalid(format!("participant {} has zero local epochs", p.id)));
    }
    if !init.layout().as_ref().eq(net.layout().as_ref()) {
        return Err(Error::ShapeMismatch("initial parameters do not match the model".into()));
    }
    if participants.iter().map(|p| p.n_k).sum::<usize>() == 0 {
        return Err(Error::InsufficientData("zero total examples".into()));
    }

    let mut theta = init.clone();
    let mut log = UpdateLog::new(Protocol::FedAvg, cfg.eta);
    let mut trace = cfg.record_trace.then(Vec::new);
    for t in 1..=cfg.rounds {
        let active: Vec<usize> = order.iter().copied().filter(|&i| participants[i].is_active(t)).collect();
        let n: usize = active.iter().map(|&i| participants[i].n_k).sum();
        let weights: Vec<f64> = active.iter().map(|&i| participants[i].n_k as f64 / n as f64).collect();
        let adv_pos = active.iter().position(|&i| participants[i].role == Role::Adversary).expect("validated");

        // masked model delta after local training
        let train = |p: &Participant, step: &mut dyn FnMut(&ParamVector, &LabeledBatch, DropoutMode) -> Result<ParamVector>| {
            let mut local = theta.clone();
            for e in 0..p.local_epochs {
                for (b, batch) in p.dataset.iter().enumerate() {
                    let seed = derive_seed(cfg.seed, "dropout", &[p.id as u64, t, e as u64, b as u64]);
                    let g = step(&local, batch, DropoutMode::Train { seed })?;
                    local = local.zip_with(&g, |w, d| w - cfg.eta * d)?;
                }
            }
            cfg.defense.mask(local.sub(&theta)?, derive_seed(cfg.seed, "share", &[p.id as u64, t]))
        };
        let mut deltas: Vec<Option<ParamVector>> = active
            .par_iter()
            .map(|&i| {
                let p = &participants[i];
                if p.role == Role::Adversary {
                    return Ok(None);
                }
                train(p, &mut |w, b, d| local_gradient(net, w, b, d)).map(Some)
            })
            .collect::<Result<_>>()?;
        deltas[adv_pos] = Some(train(&participants[active[adv_pos]], &mut |w, b, d| {
            adversary.gradient(AdversaryView { net, params: w, batch: b, round: t, dropout: d })
        })?);
        let deltas: Vec<ParamVector> = deltas.into_iter().map(|d| d.expect("filled")).collect();
        let locals: Vec<ParamVector> = deltas.iter().map(|d| theta.add(d)).collect::<Result<_>>()?;
        let items: Vec<(f64, &ParamVector)> = weights.iter().copied().zip(&locals).collect();
        let before = theta;
        theta = weighted_sum(&items)?;
        let adv_update = deltas[adv_pos].scaled(weights[adv_pos]);
        log.push(RoundRecord::new(t, before, theta.clone(), adv_update)?)?;
        if let Some(tr) = trace.as_mut() {
            tr.push(active.iter().map(|&i| participants[i].id).zip(deltas).collect());
        }
    }
    Ok(SimOutput { final_params: theta, log, trace })
}
