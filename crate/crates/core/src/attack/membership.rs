use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::protocol::UpdateLog;

pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

/// Tokens present in the others' batches of one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSet {
    pub round: u64,
    pub tokens: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipQuery {
    pub record_tokens: BTreeSet<u32>,
    pub ground_truth: Option<bool>,
}

impl MembershipQuery {
    pub fn new(tokens: impl IntoIterator<Item = u32>, ground_truth: Option<bool>) -> Result<Self> {
        let record_tokens: BTreeSet<u32> = tokens.into_iter().collect();
        if record_tokens.is_empty() {
            return Err(Error::invalid("membership query needs at least one token"));
        }
        Ok(Self { record_tokens, ground_truth })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipDecision {
    pub member: bool,
    /// Smallest round whose vocabulary contains the record.
    pub witness_round: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipEval {
    /// 0 when nothing is flagged.
    pub precision: f64,
    /// 0 when no query is a member.
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Rows of the embedding segment whose largest magnitude exceeds `zero_tol`.
pub fn extract_batch_vocab(g_obs: &ParamVector, embed_layer_id: &str, zero_tol: f64, round: u64) -> Result<VocabSet> {
    let meta = g_obs.layout().find(embed_layer_id).ok_or_else(|| Error::MissingSegment(embed_layer_id.into()))?;
    let dim = *meta.shape.get(1).ok_or_else(|| Error::ShapeMismatch(format!("{embed_layer_id} is not a matrix")))?;
    let rows = g_obs.segment(embed_layer_id).expect("segment listed in layout");
    let tokens = rows
        .chunks_exact(dim)
        .enumerate()
        .filter(|(_, row)| row.iter().any(|v| v.abs() > zero_tol))
        .map(|(i, _)| i as u32)
        .collect();
    Ok(VocabSet { round, tokens })
}

/// One vocabulary per logged round.
pub fn extract_log_vocabs(log: &UpdateLog, embed_layer_id: &str, zero_tol: f64) -> Result<Vec<VocabSet>> {
    log.rounds.iter().map(|r| extract_batch_vocab(&r.g_obs, embed_layer_id, zero_tol, r.t)).collect()
}

/// Member iff the record's tokens fit inside some round's vocabulary.
pub fn infer_membership(query: &MembershipQuery, vocabs: &[VocabSet]) -> MembershipDecision {
    let witness_round = vocabs
        .iter()
        .filter(|v| query.record_tokens.is_subset(&v.tokens))
        .map(|v| v.round)
        .min();
    MembershipDecision { member: witness_round.is_some(), witness_round }
}

pub fn eval_membership(queries: &[MembershipQuery], vocabs: &[VocabSet]) -> Result<(MembershipEval, Vec<MembershipDecision>)> {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    let mut decisions = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        let truth = q.ground_truth.ok_or(Error::MissingGroundTruth(i))?;
        let d = infer_membership(q, vocabs);
        match (d.member, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        decisions.push(d);
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let eval = MembershipEval {
        precision: ratio(tp, fp),
        recall: ratio(tp, fneg),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
    };
    Ok((eval, decisions))
}

/// `query_id,member_pred,witness_round,ground_truth`
pub fn write_membership_csv(path: &Path, queries: &[MembershipQuery], decisions: &[MembershipDecision]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "query_id,member_pred,witness_round,ground_truth")?;
    for (i, (q, d)) in queries.iter().zip(decisions).enumerate() {
        let witness = d.witness_round.map(|t| t.to_string()).unwrap_or_default();
        let truth = q.ground_truth.map(|t| t.to_string()).unwrap_or_default();
        writeln!(out, "{i},{},{witness},{truth}", d.member)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}
