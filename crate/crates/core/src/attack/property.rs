use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{InputMode, LabeledBatch, Record};
use crate::error::{Error, Result};
use crate::harness::metrics::{auc, precision_at};
use crate::nn::{train_binary_classifier, AttackExample, ClassifierConfig, DropoutMode, LogisticModel, Network, PropertyHead};
use crate::params::ParamVector;
use crate::protocol::{AdversaryStrategy, AdversaryView, DefenseConfig, Participant, Protocol, UpdateLog};
use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::{property_quota, CyclicSampler};

pub const DEFAULT_POOL_WINDOW: usize = 10;

/// Max over consecutive non-overlapping windows; the last window may be short.
pub fn pool_values(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 {
        return Err(Error::invalid("pool window must be at least 1"));
    }
    Ok(values.chunks(window).map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect())
}

/// Pool the flattened parameter vector (segments in layout order).
pub fn pool_features(grads: &ParamVector, window: usize) -> Result<Vec<f64>> {
    pool_values(grads.as_slice(), window)
}

/// Classifier input: pooled features scaled to unit L2 norm, so that the
/// overall shrinkage of updates during training does not dominate the score.
/// An all-zero vector stays zero.
pub fn attack_features(grads: &ParamVector, window: usize) -> Result<Vec<f64>> {
    let mut v = pool_features(grads, window)?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

/// The adversary's labeled auxiliary examples.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryData {
    pub d_prop: Vec<Record>,
    pub d_nonprop: Vec<Record>,
}

impl AuxiliaryData {
    /// Split records by their property bit.
    pub fn from_records(records: impl IntoIterator<Item = Record>) -> Self {
        let (d_prop, d_nonprop) = records.into_iter().partition(|r| r.property);
        Self { d_prop, d_nonprop }
    }

    pub fn validate(&self, mode: InputMode) -> Result<()> {
        if self.d_prop.is_empty() || self.d_nonprop.is_empty() {
            return Err(Error::InsufficientData(format!(
                "auxiliary data needs both classes ({} property, {} non-property)",
                self.d_prop.len(),
                self.d_nonprop.len()
            )));
        }
        if self.d_prop.iter().chain(&self.d_nonprop).any(|r| r.input.mode() != mode) {
            return Err(Error::ProtocolMismatch(format!("auxiliary data is not all {mode:?}")));
        }
        Ok(())
    }
}

/// How shadow observations are emulated under synchronized SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    #[serde(default = "default_pool")]
    pub pool_window: usize,
    pub batch_size: usize,
    /// Property share of a shadow property batch.
    #[serde(default = "one")]
    pub prop_fraction: f64,
    /// Extra non-property batches summed into each shadow gradient, standing
    /// in for the honest participants other than the target.
    #[serde(default)]
    pub honest_fill: usize,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_pool() -> usize {
    DEFAULT_POOL_WINDOW
}

fn one() -> f64 {
    1.0
}

impl ShadowConfig {
    pub fn new(batch_size: usize) -> Self {
        Self {
            pool_window: DEFAULT_POOL_WINDOW,
            batch_size,
            prop_fraction: 1.0,
            honest_fill: 0,
            defense: DefenseConfig::default(),
            seed: 0,
        }
    }
}

struct Draw {
    prop: Vec<usize>,
    nonprop: Vec<usize>,
}

/// Index draws for one shadow batch.
fn draw(props: &mut CyclicSampler, nons: &mut CyclicSampler, n_prop: usize, size: usize) -> Draw {
    Draw { prop: props.take(n_prop), nonprop: nons.take(size - n_prop) }
}

fn assemble(aux: &AuxiliaryData, d: &Draw, id: u64) -> Result<LabeledBatch> {
    let recs = d.prop.iter().map(|&i| aux.d_prop[i].clone()).chain(d.nonprop.iter().map(|&i| aux.d_nonprop[i].clone()));
    LabeledBatch::new(recs.collect(), id)
}

/// Per snapshot, one pooled property gradient and one pooled non-property
/// gradient, each summed with `honest_fill` non-property gradients.
pub fn collect_shadow_gradients(
    aux: &AuxiliaryData,
    snapshots: &[ParamVector],
    net: &Network,
    cfg: &ShadowConfig,
) -> Result<Vec<AttackExample>> {
    aux.validate(net.spec().input_mode())?;
    if snapshots.is_empty() {
        return Err(Error::EmptyLog);
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("shadow batch size must be positive"));
    }
    let quota = property_quota(cfg.prop_fraction, cfg.batch_size);
    let mut props = CyclicSampler::new(aux.d_prop.len(), derive_seed(cfg.seed, "shadow_prop", &[]));
    let mut nons = CyclicSampler::new(aux.d_nonprop.len(), derive_seed(cfg.seed, "shadow_nonprop", &[]));
    // draw sequentially so the parallel part is order-independent
    let plans: Vec<[Vec<Draw>; 2]> = (0..snapshots.len())
        .map(|_| {
            [true, false].map(|is_prop| {
                let n = if is_prop { quota } else { 0 };
                std::iter::once(draw(&mut props, &mut nons, n, cfg.batch_size))
                    .chain((0..cfg.honest_fill).map(|_| draw(&mut props, &mut nons, 0, cfg.batch_size)))
                    .collect()
            })
        })
        .collect();
    let rows: Vec<[AttackExample; 2]> = snapshots
        .par_iter()
        .zip(&plans)
        .enumerate()
        .map(|(i, (theta, plan))| {
            let round = i as u64 + 1;
            let mut pair = Vec::with_capacity(2);
            for (c, draws) in plan.iter().enumerate() {
                let mut total = theta.zeros_like();
                for (j, d) in draws.iter().enumerate() {
                    let batch = assemble(aux, d, round)?;
                    let path = [round, c as u64, j as u64];
                    let dropout = DropoutMode::Train { seed: derive_seed(cfg.seed, "shadow_dropout", &path) };
                    let (_, g) = net.forward_backward(theta, &batch, dropout)?;
                    total.add_assign(&cfg.defense.mask(g, derive_seed(cfg.seed, "shadow_share", &path))?)?;
                }
                pair.push(AttackExample { features: attack_features(&total, cfg.pool_window)?, label: c == 0, round });
            }
            let [a, b]: [AttackExample; 2] = pair.try_into().expect("two classes");
            Ok([a, b])
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Logistic scorer over normalized pooled observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyClassifier {
    pub model: LogisticModel,
    pub pool_window: usize,
    pub config: ClassifierConfig,
}

impl PropertyClassifier {
    pub fn train(rows: &[AttackExample], pool_window: usize, config: &ClassifierConfig) -> Result<Self> {
        Ok(Self { model: train_binary_classifier(rows, config)?, pool_window, config: config.clone() })
    }

    pub fn score(&self, observation: &ParamVector) -> Result<f64> {
        self.model.score(&attack_features(observation, self.pool_window)?)
    }
}

/// One score per logged round.
pub fn infer_single_batch(clf: &PropertyClassifier, log: &UpdateLog) -> Result<Vec<(u64, f64)>> {
    (0..log.len())
        .into_par_iter()
        .map(|i| Ok((log.rounds[i].t, clf.score(&log.observation(i))?)))
        .collect()
}

/// Mean of the single-batch scores.
pub fn infer_dataset_level(clf: &PropertyClassifier, log: &UpdateLog) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    Ok(mean_score(&infer_single_batch(clf, log)?))
}

pub fn mean_score(scores: &[(u64, f64)]) -> f64 {
    scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64
}

/// Trailing moving average over the last `window` rounds (fewer at the start).
pub fn smooth_scores(scores: &[(u64, f64)], window: usize) -> Result<Vec<(u64, f64)>> {
    if window < 1 {
        return Err(Error::invalid("smoothing window must be at least 1"));
    }
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, &(t, _))| {
            let win = &scores[(i + 1).saturating_sub(window)..=i];
            (t, win.iter().map(|x| x.1).sum::<f64>() / win.len() as f64)
        })
        .collect())
}

pub fn infer_occurrence_timeline(clf: &PropertyClassifier, log: &UpdateLog, window: usize) -> Result<Vec<(u64, f64)>> {
    smooth_scores(&infer_single_batch(clf, log)?, window)
}

/// Local property head training settings for the active attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub seed: u64,
    /// Learning rate of the local head.
    pub eta: f64,
}

/// Uploads gradients of `alpha * L_main + (1 - alpha) * L_prop` and trains
/// its property head locally.
#[derive(Debug, Clone)]
pub struct ActiveAdversary {
    alpha: f64,
    head: PropertyHead,
    head_eta: f64,
}

impl ActiveAdversary {
    pub fn head(&self) -> &PropertyHead {
        &self.head
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

pub fn run_active_attack(adv: &Participant, net: &Network, alpha: f64, head: &HeadSpec) -> Result<ActiveAdversary> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha={alpha} outside [0,1]")));
    }
    if !(head.eta.is_finite() && head.eta > 0.0) {
        return Err(Error::invalid("property head learning rate must be positive"));
    }
    let props = adv.dataset.iter().map(LabeledBatch::property_count).sum::<usize>();
    if props == 0 || props == adv.n_k {
        return Err(Error::MissingDualLabels(format!(
            "adversary data has {props} property examples out of {}; both property labels are needed",
            adv.n_k
        )));
    }
    let width = net.spec().penultimate_width();
    if width == 0 {
        return Err(Error::invalid("active attack needs a hidden layer below the output"));
    }
    Ok(ActiveAdversary { alpha, head: PropertyHead::init(width, head.seed), head_eta: head.eta })
}

impl AdversaryStrategy for ActiveAdversary {
    fn gradient(&mut self, v: AdversaryView<'_>) -> Result<ParamVector> {
        if self.alpha == 1.0 {
            return Ok(v.net.forward_backward(v.params, v.batch, v.dropout)?.1);
        }
        let mt = v.net.multitask_forward_backward(v.params, &self.head, v.batch, self.alpha, v.dropout)?;
        let step = self.head_eta;
        self.head.weights.iter_mut().zip(&mt.head.weights).for_each(|(w, g)| *w -= step * g);
        self.head.bias.iter_mut().zip(&mt.head.bias).for_each(|(w, g)| *w -= step * g);
        Ok(mt.grads)
    }
}

/// What the adversary knows about a model-averaging deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedAvgMeta {
    /// `n_k / n` of every participant except the adversary; index 0 is the target.
    pub weights: Vec<f64>,
    pub local_epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Property share of the emulated target's local data.
    pub prop_fraction: f64,
    #[serde(default = "default_pool")]
    pub pool_window: usize,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Emulate local training from every snapshot with and without property data,
/// train a classifier on the aggregated emulated updates and score the log.
pub fn emulate_model_averaging_attack(
    aux: &AuxiliaryData,
    log: &UpdateLog,
    net: &Network,
    meta: &FedAvgMeta,
    clf_cfg: &ClassifierConfig,
) -> Result<(PropertyClassifier, Vec<(u64, f64)>)> {
    if log.protocol != Protocol::FedAvg {
        return Err(Error::ProtocolMismatch("model-averaging emulation needs a model-averaging log".into()));
    }
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    aux.validate(net.spec().input_mode())?;
    if meta.weights.is_empty() || meta.local_epochs == 0 || meta.batches_per_epoch == 0 || meta.batch_size == 0 {
        return Err(Error::invalid("model-averaging metadata has an empty dimension"));
    }
    if !(0.0..=1.0).contains(&meta.prop_fraction) {
        return Err(Error::invalid("property fraction outside [0,1]"));
    }
    let local_n = meta.batches_per_epoch * meta.batch_size;
    let n_prop = (meta.prop_fraction * local_n as f64).round() as usize;
    let mut props = CyclicSampler::new(aux.d_prop.len(), derive_seed(meta.seed, "emulate_prop", &[]));
    let mut nons = CyclicSampler::new(aux.d_nonprop.len(), derive_seed(meta.seed, "emulate_nonprop", &[]));
    let mut order_rng = rng_from_seed(derive_seed(meta.seed, "emulate_order", &[]));
    // per snapshot and class: one local dataset per emulated participant
    let plans: Vec<[Vec<Vec<Record>>; 2]> = (0..log.len())
        .map(|_| {
            [n_prop, 0].map(|target_props| {
                (0..meta.weights.len())
                    .map(|j| {
                        let np = if j == 0 { target_props } else { 0 };
                        let d = draw(&mut props, &mut nons, np, local_n);
                        let mut recs: Vec<Record> = d
                            .prop
                            .iter()
                            .map(|&i| aux.d_prop[i].clone())
                            .chain(d.nonprop.iter().map(|&i| aux.d_nonprop[i].clone()))
                            .collect();
                        recs.shuffle(&mut order_rng);
                        recs
                    })
                    .collect()
            })
        })
        .collect();
    let eta = log.eta;
    let rows: Vec<[AttackExample; 2]> = log
        .rounds
        .par_iter()
        .zip(&plans)
        .map(|(r, plan)| {
            let theta = &r.theta_before;
            let mut pair = Vec::with_capacity(2);
            for (c, locals) in plan.iter().enumerate() {
                let mut agg = theta.zeros_like();
                for (j, recs) in locals.iter().enumerate() {
                    let mut w = theta.clone();
                    for e in 0..meta.local_epochs {
                        for (b, chunk) in recs.chunks(meta.batch_size).enumerate() {
                            let batch = LabeledBatch::new(chunk.to_vec(), b as u64)?;
                            let path = [r.t, c as u64, j as u64, e as u64, b as u64];
                            let dropout = DropoutMode::Train { seed: derive_seed(meta.seed, "emulate_dropout", &path) };
                            let (_, g) = net.forward_backward(&w, &batch, dropout)?;
                            w = w.zip_with(&g, |p, d| p - eta * d)?;
                        }
                    }
                    let delta = meta.defense.mask(w.sub(theta)?, derive_seed(meta.seed, "emulate_share", &[r.t, c as u64, j as u64]))?;
                    agg.axpy(meta.weights[j], &delta)?;
                }
                pair.push(AttackExample { features: attack_features(&agg, meta.pool_window)?, label: c == 0, round: r.t });
            }
            let [a, b]: [AttackExample; 2] = pair.try_into().expect("two classes");
            Ok([a, b])
        })
        .collect::<Result<_>>()?;
    let rows: Vec<AttackExample> = rows.into_iter().flatten().collect();
    let clf = PropertyClassifier::train(&rows, meta.pool_window, clf_cfg)?;
    let scores = infer_single_batch(&clf, log)?;
    Ok((clf, scores))
}

/// `round,score,true_batch_label`
pub fn write_scores_csv(path: &Path, scores: &[(u64, f64)], labels: Option<&[bool]>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "round,score,true_batch_label")?;
    for (i, (t, s)) in scores.iter().enumerate() {
        let label = labels.map(|l| (l[i] as u8).to_string()).unwrap_or_default();
        writeln!(out, "{t},{s},{label}")?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub auc: Option<f64>,
    #[serde(rename = "precision_at_0.5")]
    pub precision_at_half: Option<f64>,
    pub config_hash: String,
}

impl AttackSummary {
    /// Summaries need ground truth with both classes; otherwise the rates are null.
    pub fn from_scores(scores: &[(u64, f64)], labels: &[bool], config_hash: String) -> Self {
        let s: Vec<f64> = scores.iter().map(|x| x.1).collect();
        let a = auc(&s, labels).ok();
        Self { auc: a, precision_at_half: a.map(|_| precision_at(&s, labels, 0.5)), config_hash }
    }
}
