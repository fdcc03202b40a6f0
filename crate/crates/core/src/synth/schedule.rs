use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::batch::{Input, LabeledBatch, Record};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};

/// Which of the target's rounds carry property examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    /// One in `m` eligible rounds is a property round.
    pub m: u32,
    /// Fraction of a property batch drawn from property examples.
    #[serde(default = "one")]
    pub fraction: f64,
    /// Property rounds only occur for `start <= t < end` (rounds are 1-based).
    #[serde(default)]
    pub active_window: Option<(u64, u64)>,
}

fn one() -> f64 {
    1.0
}

impl Default for BatchSchedule {
    fn default() -> Self {
        Self { m: 2, fraction: 1.0, active_window: None }
    }
}

impl BatchSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("schedule m must be at least 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!("in-batch property fraction {} outside (0,1]", self.fraction)));
        }
        if let Some((s, e)) = self.active_window {
            if s >= e {
                return Err(Error::invalid("active window must satisfy start < end"));
            }
        }
        Ok(())
    }

    /// Property flag for rounds `1..=rounds`.
    pub fn property_rounds(&self, rounds: u64, rng: &mut SimRng) -> Vec<bool> {
        let eligible: Vec<u64> = (1..=rounds)
            .filter(|t| self.active_window.is_none_or(|(s, e)| (s..e).contains(t)))
            .collect();
        let count = eligible.len() / self.m as usize;
        let mut picked = eligible;
        picked.shuffle(rng);
        picked.truncate(count);
        let mut flags = vec![false; rounds as usize];
        for t in picked {
            flags[t as usize - 1] = true;
        }
        flags
    }
}

/// Endless without-replacement sampler that reshuffles after each pass.
pub struct CyclicSampler {
    order: Vec<usize>,
    pos: usize,
    rng: SimRng,
}

impl CyclicSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    pub fn take(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.next_index()).collect()
    }
}

/// Number of property examples in a property batch.
pub fn property_quota(fraction: f64, batch_size: usize) -> usize {
    ((fraction * batch_size as f64).round() as usize).clamp(1, batch_size)
}

/// Build the target's per-round batches (`batch_id` = round, 1-based).
pub fn schedule_batches(
    pool: &[Record],
    schedule: &BatchSchedule,
    batch_size: usize,
    rounds: u64,
    seed: u64,
) -> Result<Vec<LabeledBatch>> {
    schedule.validate()?;
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let flags = schedule.property_rounds(rounds, &mut rng);
    let prop: Vec<&Record> = pool.iter().filter(|r| r.property).collect();
    let nonprop: Vec<&Record> = pool.iter().filter(|r| !r.property).collect();
    let quota = property_quota(schedule.fraction, batch_size);
    let needs_prop = flags.iter().any(|&f| f);
    if needs_prop && prop.len() < quota {
        return Err(Error::InsufficientData(format!(
            "schedule needs {quota} property examples per batch, pool has {}",
            prop.len()
        )));
    }
    let nonprop_needed = flags.iter().map(|&f| if f { batch_size - quota } else { batch_size }).max().unwrap_or(0);
    if nonprop.len() < nonprop_needed {
        return Err(Error::InsufficientData(format!(
            "schedule needs {nonprop_needed} non-property examples per batch, pool has {}",
            nonprop.len()
        )));
    }
    let mut prop_sampler = CyclicSampler::new(prop.len(), rand::Rng::random(&mut rng));
    let mut non_sampler = CyclicSampler::new(nonprop.len(), rand::Rng::random(&mut rng));
    flags
        .iter()
        .enumerate()
        .map(|(i, &is_prop)| {
            let mut recs: Vec<Record> = Vec::with_capacity(batch_size);
            let n_prop = if is_prop { quota } else { 0 };
            recs.extend(prop_sampler.take(n_prop).into_iter().map(|j| prop[j].clone()));
            recs.extend(non_sampler.take(batch_size - n_prop).into_iter().map(|j| nonprop[j].clone()));
            recs.shuffle(&mut rng);
            LabeledBatch::new(recs, i as u64 + 1)
        })
        .collect()
}

/// Split records into consecutive batches; the final batch may be short.
pub fn partition_batches(records: &[Record], batch_size: usize) -> Result<Vec<LabeledBatch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    records
        .chunks(batch_size)
        .enumerate()
        .map(|(i, c)| LabeledBatch::new(c.to_vec(), i as u64))
        .collect()
}

/// Split records into exactly `count` near-equal batches.
pub fn split_into(records: &[Record], count: usize) -> Result<Vec<LabeledBatch>> {
    if count == 0 || records.len() < count {
        return Err(Error::InsufficientData(format!("cannot split {} records into {count} batches", records.len())));
    }
    let base = records.len() / count;
    let extra = records.len() % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let len = base + usize::from(i < extra);
        out.push(LabeledBatch::new(records[start..start + len].to_vec(), i as u64)?);
        start += len;
    }
    Ok(out)
}

/// Set of tokens a restricted-vocabulary model is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabFilter {
    keep: BTreeSet<u32>,
}

impl VocabFilter {
    /// The `top_n` tokens by occurrence count over `corpus`, ties to the lower index.
    pub fn top_n<'a>(corpus: impl IntoIterator<Item = &'a Record>, top_n: usize) -> Result<Self> {
        if top_n == 0 {
            return Err(Error::invalid("vocab_top_n must be at least 1"));
        }
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for r in corpus {
            for &t in r.input.as_tokens().ok_or_else(|| Error::invalid("vocabulary restriction needs token inputs"))? {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(Self { keep: ranked.into_iter().take(top_n).map(|(t, _)| t).collect() })
    }

    pub fn contains(&self, token: u32) -> bool {
        self.keep.contains(&token)
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Drop disallowed tokens; `None` if nothing is left.
    pub fn apply(&self, record: &Record) -> Option<Record> {
        let toks: Vec<u32> = record.input.as_tokens()?.iter().copied().filter(|t| self.keep.contains(t)).collect();
        (!toks.is_empty()).then(|| Record { input: Input::Tokens(toks), ..record.clone() })
    }
}

/// Restrict every participant's data to the corpus-wide `top_n` tokens.
/// Returns the filtered datasets and the number of examples that became empty.
pub fn restrict_vocab(datasets: &[Vec<Record>], top_n: usize) -> Result<(Vec<Vec<Record>>, usize)> {
    let filter = VocabFilter::top_n(datasets.iter().flatten(), top_n)?;
    let mut removed = 0;
    let out = datasets
        .iter()
        .map(|d| {
            d.iter()
                .filter_map(|r| {
                    let kept = filter.apply(r);
                    removed += kept.is_none() as usize;
                    kept
                })
                .collect()
        })
        .collect();
    Ok((out, removed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n_prop: usize, n_non: usize) -> Vec<Record> {
        (0..n_prop + n_non)
            .map(|i| Record { input: Input::Dense(vec![i as f64]), label: i % 2, property: i < n_prop })
            .collect()
    }

    #[test]
    fn one_in_m_rounds_are_property_rounds() {
        let batches = schedule_batches(&pool(100, 100), &BatchSchedule::default(), 8, 100, 1).unwrap();
        assert_eq!(batches.len(), 100);
        assert_eq!(batches.iter().filter(|b| b.has_property()).count(), 50);
        assert!(batches.iter().enumerate().all(|(i, b)| b.batch_id == i as u64 + 1));
    }

    #[test]
    fn fractional_batches_hold_exact_counts() {
        let s = BatchSchedule { m: 2, fraction: 0.5, active_window: None };
        let batches = schedule_batches(&pool(100, 200), &s, 32, 40, 2).unwrap();
        for b in &batches {
            assert!(b.property_count() == 0 || b.property_count() == 16);
        }
    }

    #[test]
    fn window_confines_property_examples() {
        let s = BatchSchedule { m: 1, fraction: 1.0, active_window: Some((100, 200)) };
        let batches = schedule_batches(&pool(50, 50), &s, 4, 400, 3).unwrap();
        for (i, b) in batches.iter().enumerate() {
            let t = i as u64 + 1;
            assert_eq!(b.property_count() > 0, (100..200).contains(&t), "round {t}");
        }
    }

    #[test]
    fn insufficient_property_examples() {
        let s = BatchSchedule { m: 2, fraction: 1.0, active_window: None };
        assert!(matches!(schedule_batches(&pool(3, 100), &s, 8, 10, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn deterministic_under_seed() {
        let s = BatchSchedule::default();
        assert_eq!(
            schedule_batches(&pool(40, 40), &s, 8, 30, 9).unwrap(),
            schedule_batches(&pool(40, 40), &s, 8, 30, 9).unwrap()
        );
    }

    fn tok(t: &[u32]) -> Record {
        Record { input: Input::tokens(t.to_vec()), label: 0, property: false }
    }

    #[test]
    fn vocab_restriction_cases() {
        let corpus = vec![vec![tok(&[0, 3, 4]), tok(&[0, 5]), tok(&[0, 3])]];
        let (same, removed) = restrict_vocab(&corpus, 10).unwrap();
        assert_eq!(same, corpus);
        assert_eq!(removed, 0);
        let (only0, removed) = restrict_vocab(&corpus, 1).unwrap();
        assert_eq!(removed, 0);
        assert!(only0[0].iter().all(|r| r.input.as_tokens().unwrap() == [0]));
        // tie between 4 and 5 (one occurrence each) goes to the lower index
        let f = VocabFilter::top_n(corpus.iter().flatten(), 3).unwrap();
        assert!(f.contains(4) && !f.contains(5));
        let (_, removed) = restrict_vocab(&[vec![tok(&[7]), tok(&[0]), tok(&[0])]], 1).unwrap();
        assert_eq!(removed, 1);
    }

    #[test]
    fn split_into_equal_parts() {
        let b = split_into(&pool(0, 23), 10).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.iter().map(|x| x.len()).sum::<usize>(), 23);
    }
}
