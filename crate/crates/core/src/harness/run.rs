use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::{
    collect_shadow_gradients, emulate_model_averaging_attack, eval_membership, extract_log_vocabs, infer_single_batch,
    mean_score, run_active_attack, smooth_scores, write_membership_csv, write_scores_csv, AttackSummary, AuxiliaryData,
    FedAvgMeta, HeadSpec, MembershipDecision, MembershipEval, MembershipQuery, PropertyClassifier, ShadowConfig,
};
use crate::batch::{LabeledBatch, Record};
use crate::error::{Error, Result, WithModule};
use crate::nn::{ClassifierConfig, Network};
use crate::params::ParamVector;
use crate::protocol::{
    run_fed_avg, run_sync_sgd, write_log, AdversaryStrategy, PassiveAdversary, Participant, Role, SimConfig, UpdateLog,
};
use crate::rng::SeedStreams;
use crate::synth::{generate, restrict_vocab, schedule_batches, split_into, write_datasets, SynthSpec};

use super::config::{AttackKind, ProtocolKind, ScenarioConfig};
use super::metrics::{auc, multiclass_auc, precision_at};

/// Share of each participant's examples held out for main-task evaluation.
pub const TEST_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub attack: String,
    pub attack_auc: Option<f64>,
    pub attack_precision: Option<f64>,
    pub attack_recall: Option<f64>,
    /// Dataset-level score: mean of the per-round scores.
    pub attack_score: Option<f64>,
    /// Mean smoothed score inside the planted window (or after the target
    /// joins) minus the mean outside it.
    pub timeline_gap: Option<f64>,
    pub main_task_auc: f64,
    pub per_round_scores: Option<String>,
    pub config_hash: String,
    pub runtime_secs: f64,
}

/// Everything a run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: MetricsReport,
    /// The synthetic spec actually used (derived seed, per-participant sizes).
    pub synth: SynthSpec,
    /// Generated data after any vocabulary restriction.
    pub datasets: Vec<Vec<Record>>,
    pub vocab_removed: usize,
    pub log: UpdateLog,
    pub final_params: ParamVector,
    pub round_scores: Option<Vec<(u64, f64)>>,
    /// Whether the target's contribution carried the property, per round.
    pub round_labels: Vec<bool>,
    pub membership: Option<MembershipResult>,
    pub classifier: Option<PropertyClassifier>,
}

#[derive(Debug, Clone)]
pub struct MembershipResult {
    pub queries: Vec<MembershipQuery>,
    pub decisions: Vec<MembershipDecision>,
    pub eval: MembershipEval,
}

/// Consecutive full batches; a short remainder is dropped.
fn full_batches(records: &[Record], size: usize) -> Result<Vec<LabeledBatch>> {
    if records.len() < size {
        return Err(Error::InsufficientData(format!("{} examples cannot fill a batch of {size}", records.len())));
    }
    records.chunks_exact(size).enumerate().map(|(i, c)| LabeledBatch::new(c.to_vec(), i as u64)).collect()
}

fn fixed_local_data(records: &[Record], batches: usize, size: usize) -> Result<Vec<LabeledBatch>> {
    let need = batches * size;
    if records.len() < need {
        return Err(Error::InsufficientData(format!("local data needs {need} examples, have {}", records.len())));
    }
    split_into(&records[..need], batches)
}

fn role_of(k: usize) -> Role {
    match k {
        0 => Role::Adversary,
        1 => Role::Target,
        _ => Role::Honest,
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Run a scenario without touching the filesystem.
pub fn execute(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    let started = Instant::now();
    cfg.validate().in_module("harness")?;
    let streams = SeedStreams::new(cfg.seed);
    let proto = &cfg.protocol;
    let k_total = proto.participants;

    let mut synth = cfg.synth.clone();
    synth.sizes = cfg.participant_sizes()?;
    synth.seed = streams.seed(SeedStreams::DATA);
    let mut datasets = generate(&synth).in_module("data-synth")?;
    let mut vocab_removed = 0;
    if let Some(n) = cfg.defense.vocab_top_n {
        (datasets, vocab_removed) = restrict_vocab(&datasets, n).in_module("data-synth")?;
    }

    let mut train = Vec::with_capacity(k_total);
    let mut test = Vec::new();
    for (k, d) in datasets.iter().enumerate() {
        let n_test = ((d.len() as f64 * TEST_FRACTION).ceil() as usize).min(d.len());
        let (tr, te) = d.split_at(d.len() - n_test);
        if tr.is_empty() {
            return Err(Error::InsufficientData(format!("participant {k} has no training examples"))).in_module("harness");
        }
        train.push(tr.to_vec());
        test.push(te.to_vec());
    }

    let participants: Vec<Participant> = (0..k_total)
        .map(|k| {
            let data = match proto.kind {
                ProtocolKind::FedAvg => fixed_local_data(&train[k], proto.batches_per_epoch, proto.batch_size)?,
                ProtocolKind::SyncSgd => match (&cfg.schedule, k) {
                    (Some(s), 1) => schedule_batches(
                        &train[k],
                        s,
                        proto.batch_size,
                        proto.rounds,
                        streams.seed_at(SeedStreams::SCHEDULE, &[1]),
                    )?,
                    _ => full_batches(&train[k], proto.batch_size)?,
                },
            };
            let mut p = Participant::new(k, role_of(k), data).with_local_epochs(proto.local_epochs);
            if k == 1 {
                p = p.joining_at(proto.target_joins_at.unwrap_or(1));
            }
            Ok(p)
        })
        .collect::<Result<_>>()
        .in_module("data-synth")?;

    let model = match cfg.defense.dropout_p {
        Some(p) => cfg.model.with_dropout(p),
        None => cfg.model.clone(),
    };
    let net = Network::new(&model).in_module("nn-core")?;
    let init = net.init_params(streams.seed(SeedStreams::INIT)).in_module("nn-core")?;
    let sim_cfg = SimConfig {
        defense: cfg.defense.clone(),
        seed: streams.seed(SeedStreams::DROPOUT),
        ..SimConfig::new(proto.eta, proto.rounds)
    };

    let mut adversary: Box<dyn AdversaryStrategy> = match cfg.attack.kind {
        AttackKind::ActiveProp { alpha, head_eta } => {
            let head = HeadSpec { seed: streams.seed_at(SeedStreams::ATTACK, &[2]), eta: head_eta.unwrap_or(proto.eta) };
            Box::new(run_active_attack(&participants[0], &net, alpha, &head).in_module("attack-property")?)
        }
        _ => Box::new(PassiveAdversary),
    };
    let sim = match proto.kind {
        ProtocolKind::SyncSgd => run_sync_sgd(&participants, &net, &init, &sim_cfg, adversary.as_mut()),
        ProtocolKind::FedAvg => run_fed_avg(&participants, &net, &init, &sim_cfg, adversary.as_mut()),
    }
    .in_module("protocol-sim")?;
    let log = sim.log;

    let target = &participants[1];
    let target_has_property = target.dataset.iter().any(LabeledBatch::has_property);
    let round_labels: Vec<bool> = (1..=proto.rounds)
        .map(|t| {
            target.is_active(t)
                && match proto.kind {
                    ProtocolKind::SyncSgd => target.batch_for_round(t).has_property(),
                    ProtocolKind::FedAvg => target_has_property,
                }
        })
        .collect();

    let mut report = MetricsReport {
        name: cfg.name.clone(),
        attack: cfg.attack.kind.name().into(),
        attack_auc: None,
        attack_precision: None,
        attack_recall: None,
        attack_score: None,
        timeline_gap: None,
        main_task_auc: 0.0,
        per_round_scores: None,
        config_hash: cfg.config_hash(),
        runtime_secs: 0.0,
    };
    let mut membership = None;
    let mut round_scores = None;
    let mut classifier = None;
    let clf_cfg = ClassifierConfig { seed: streams.seed_at(SeedStreams::ATTACK, &[1]), ..cfg.attack.classifier.clone() };

    match cfg.attack.kind {
        AttackKind::None => {}
        AttackKind::Membership => {
            let seg = model.embedding_segment().expect("validated");
            let vocabs = extract_log_vocabs(&log, &seg, cfg.attack.zero_tol).in_module("attack-membership")?;
            let used: BTreeSet<usize> = (1..=proto.rounds)
                .filter(|&t| target.is_active(t))
                .map(|t| ((t - target.joins_at) % target.dataset.len() as u64) as usize)
                .collect();
            // balanced queries: every held-out record (never trained on by
            // anyone) against an equal-size sample of the target's trained records
            let mut members: Vec<&Record> = used.iter().flat_map(|&i| target.dataset[i].records()).collect();
            let outsiders: Vec<&Record> = test.iter().flatten().collect();
            members.shuffle(&mut streams.rng(SeedStreams::ATTACK, &[3]));
            members.truncate(outsiders.len());
            let queries: Vec<MembershipQuery> = members
                .into_iter()
                .map(|r| (r, true))
                .chain(outsiders.into_iter().map(|r| (r, false)))
                .map(|(r, truth)| MembershipQuery::new(r.input.as_tokens().unwrap_or_default().iter().copied(), Some(truth)))
                .collect::<Result<_>>()
                .in_module("attack-membership")?;
            let (eval, decisions) = eval_membership(&queries, &vocabs).in_module("attack-membership")?;
            report.attack_precision = Some(eval.precision);
            report.attack_recall = Some(eval.recall);
            membership = Some(MembershipResult { queries, decisions, eval });
        }
        AttackKind::PassiveProp | AttackKind::ActiveProp { .. } => {
            let aux = AuxiliaryData::from_records(train[0].iter().cloned());
            let shadow = ShadowConfig {
                pool_window: cfg.attack.pool_window,
                batch_size: proto.batch_size,
                prop_fraction: cfg.attack.shadow_prop_fraction,
                honest_fill: k_total - 2,
                defense: cfg.defense.clone(),
                seed: streams.seed_at(SeedStreams::ATTACK, &[0]),
            };
            let snapshots: Vec<ParamVector> = log.rounds.iter().map(|r| r.theta_before.clone()).collect();
            let rows = collect_shadow_gradients(&aux, &snapshots, &net, &shadow).in_module("attack-property")?;
            let clf = PropertyClassifier::train(&rows, cfg.attack.pool_window, &clf_cfg).in_module("attack-property")?;
            round_scores = Some(infer_single_batch(&clf, &log).in_module("attack-property")?);
            classifier = Some(clf);
        }
        AttackKind::FedavgProp { prop_fraction } => {
            let aux = AuxiliaryData::from_records(train[0].iter().cloned());
            let n: usize = participants.iter().map(|p| p.n_k).sum();
            let meta = FedAvgMeta {
                weights: participants[1..].iter().map(|p| p.n_k as f64 / n as f64).collect(),
                local_epochs: proto.local_epochs,
                batches_per_epoch: proto.batches_per_epoch,
                batch_size: proto.batch_size,
                prop_fraction,
                pool_window: cfg.attack.pool_window,
                defense: cfg.defense.clone(),
                seed: streams.seed_at(SeedStreams::ATTACK, &[0]),
            };
            let (clf, scores) =
                emulate_model_averaging_attack(&aux, &log, &net, &meta, &clf_cfg).in_module("attack-property")?;
            round_scores = Some(scores);
            classifier = Some(clf);
        }
    }

    if let Some(scores) = &round_scores {
        let s: Vec<f64> = scores.iter().map(|x| x.1).collect();
        if let Ok(a) = auc(&s, &round_labels) {
            report.attack_auc = Some(a);
            report.attack_precision = Some(precision_at(&s, &round_labels, 0.5));
        }
        report.attack_score = Some(mean_score(scores));
        report.per_round_scores = Some("scores.csv".into());
        let inside: Option<Box<dyn Fn(u64) -> bool>> = match (&cfg.schedule, proto.target_joins_at) {
            (Some(sch), _) if sch.active_window.is_some() => {
                let (a, b) = sch.active_window.expect("checked");
                Some(Box::new(move |t| (a..b).contains(&t)))
            }
            (_, Some(j)) => Some(Box::new(move |t| t >= j)),
            _ => None,
        };
        if let Some(inside) = inside {
            let smoothed = smooth_scores(scores, cfg.attack.smoothing_window)?;
            let mi = mean(smoothed.iter().filter(|x| inside(x.0)).map(|x| x.1));
            let mo = mean(smoothed.iter().filter(|x| !inside(x.0)).map(|x| x.1));
            report.timeline_gap = mi.zip(mo).map(|(a, b)| a - b);
        }
    }

    let test_all: Vec<&Record> = test.iter().flatten().collect();
    let probs: Vec<Vec<f64>> = test_all
        .iter()
        .map(|r| net.predict_proba(&sim.final_params, &r.input))
        .collect::<Result<_>>()
        .in_module("nn-core")?;
    let labels: Vec<usize> = test_all.iter().map(|r| r.label).collect();
    report.main_task_auc = multiclass_auc(&probs, &labels).in_module("harness")?;
    report.runtime_secs = started.elapsed().as_secs_f64();

    Ok(ScenarioOutcome {
        report,
        synth,
        datasets,
        vocab_removed,
        log,
        final_params: sim.final_params,
        round_scores,
        round_labels,
        membership,
        classifier,
    })
}

/// Write config, datasets, update log, attack outputs and `report.json`.
pub fn write_artifacts(dir: &Path, cfg: &ScenarioConfig, out: &ScenarioOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_vec_pretty(cfg)?)?;
    write_datasets(&dir.join("data"), &out.synth, &out.datasets)?;
    if cfg.write_update_log {
        write_log(&dir.join("update_log"), &out.log)?;
    }
    if let Some(scores) = &out.round_scores {
        write_scores_csv(&dir.join("scores.csv"), scores, Some(&out.round_labels))?;
        let summary = AttackSummary::from_scores(scores, &out.round_labels, out.report.config_hash.clone());
        fs::write(dir.join("attack_summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    }
    if let Some(m) = &out.membership {
        write_membership_csv(&dir.join("membership.csv"), &m.queries, &m.decisions)?;
    }
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&out.report)?)?;
    Ok(())
}

/// Execute and, when `output_dir` is set, persist all artifacts there.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport> {
    let out = execute(cfg)?;
    if let Some(dir) = &cfg.output_dir {
        write_artifacts(dir, cfg, &out).in_module("harness")?;
    }
    Ok(out.report)
}
