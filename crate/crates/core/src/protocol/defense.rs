use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::rng_from_seed;

/// How the shared coordinates are chosen under partial gradient sharing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    LargestMagnitude,
    RandomSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    /// Fraction of update coordinates each participant uploads.
    #[serde(default = "full_share")]
    pub share_fraction: f64,
    #[serde(default)]
    pub selection: Selection,
    /// Keep only the most frequent tokens (applied to the data, not the protocol).
    #[serde(default)]
    pub vocab_top_n: Option<usize>,
    /// Dropout probability inserted into the joint model.
    #[serde(default)]
    pub dropout_p: Option<f64>,
}

fn full_share() -> f64 {
    1.0
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self { share_fraction: 1.0, selection: Selection::LargestMagnitude, vocab_top_n: None, dropout_p: None }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.share_fraction > 0.0 && self.share_fraction <= 1.0) {
            return Err(Error::invalid(format!("share_fraction {} outside (0,1]", self.share_fraction)));
        }
        if self.vocab_top_n == Some(0) {
            return Err(Error::invalid("vocab_top_n must be at least 1"));
        }
        if let Some(p) = self.dropout_p {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::invalid(format!("dropout_p {p} outside [0,1)")));
            }
        }
        Ok(())
    }

    /// Mask an update before upload. A full share returns the input untouched.
    pub fn mask(&self, update: ParamVector, seed: u64) -> Result<ParamVector> {
        if self.share_fraction >= 1.0 {
            return Ok(update);
        }
        apply_share_fraction(&update, self.share_fraction, self.selection, seed)
    }
}

/// Number of coordinates kept when sharing `fraction` of `len`.
pub fn shared_count(fraction: f64, len: usize) -> usize {
    // guard against 0.1 * 30 = 3.0000000000000004 rounding up to 4
    (((fraction * len as f64) - 1e-9).ceil() as usize).clamp(1, len.max(1))
}

/// Zero all but `ceil(fraction * len)` coordinates.
pub fn apply_share_fraction(grads: &ParamVector, fraction: f64, selection: Selection, seed: u64) -> Result<ParamVector> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("share fraction {fraction} outside (0,1]")));
    }
    let values = grads.as_slice();
    let k = shared_count(fraction, values.len());
    if k >= values.len() {
        return Ok(grads.clone());
    }
    let keep: Vec<usize> = match selection {
        Selection::LargestMagnitude => {
            let mut idx: Vec<usize> = (0..values.len()).collect();
            idx.select_nth_unstable_by(k - 1, |&a, &b| {
                values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b))
            });
            idx.truncate(k);
            idx
        }
        Selection::RandomSubset => sample(&mut rng_from_seed(seed), values.len(), k).into_vec(),
    };
    let mut out = grads.zeros_like();
    let dst = out.as_mut_slice();
    for i in keep {
        dst[i] = values[i];
    }
    Ok(out)
}
