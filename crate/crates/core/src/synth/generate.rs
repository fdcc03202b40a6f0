use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{Input, InputMode, Record};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// Feature-space layout of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthMode {
    /// Unit-variance Gaussian features. Class signal lives in the first
    /// `class_dims` coordinates, the property in the next `property_dims`.
    Dense { dim: usize, class_dims: usize, property_dims: usize, class_sep: f64 },
    /// Token sets over a Zipf-distributed background vocabulary. The last
    /// `property_tokens` indices are reserved for the property.
    Sparse {
        vocab: usize,
        min_tokens: usize,
        max_tokens: usize,
        zipf_exponent: f64,
        /// Multiplicative boost of a token's weight for its affine class.
        class_bias: f64,
        property_tokens: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub mode: SynthMode,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Mean shift in standard deviations (dense) or expected number of
    /// property tokens per property example (sparse).
    pub property_effect: f64,
    /// Desired Pearson correlation between the binary main label and the property bit.
    #[serde(default)]
    pub target_corr: f64,
    /// Examples per participant.
    pub sizes: Vec<usize>,
    /// Property prevalence per participant; a single value applies to all.
    pub base_rates: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> usize {
    2
}

impl SynthSpec {
    pub fn input_mode(&self) -> InputMode {
        match self.mode {
            SynthMode::Dense { .. } => InputMode::Dense,
            SynthMode::Sparse { .. } => InputMode::Sparse,
        }
    }

    /// Dense dimension or vocabulary size.
    pub fn input_width(&self) -> usize {
        match self.mode {
            SynthMode::Dense { dim, .. } => dim,
            SynthMode::Sparse { vocab, .. } => vocab,
        }
    }

    pub fn base_rate(&self, participant: usize) -> f64 {
        if self.base_rates.len() == 1 {
            self.base_rates[0]
        } else {
            self.base_rates[participant]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if !(-1.0..=1.0).contains(&self.target_corr) {
            return Err(Error::invalid(format!("target_corr {} outside [-1,1]", self.target_corr)));
        }
        if !(self.property_effect >= 0.0) {
            return Err(Error::invalid("property_effect must be non-negative"));
        }
        if self.num_classes > 2 && self.target_corr != 0.0 {
            return Err(Error::invalid("correlation control requires a binary main task"));
        }
        if self.base_rates.len() != 1 && self.base_rates.len() != self.sizes.len() {
            return Err(Error::invalid("base_rates must have one entry or one per participant"));
        }
        if let Some(r) = self.base_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("base rate {r} outside [0,1]")));
        }
        match self.mode {
            SynthMode::Dense { dim, class_dims, property_dims, class_sep } => {
                if class_dims == 0 || class_dims + property_dims > dim {
                    return Err(Error::invalid("dense blocks must be non-empty and fit in dim"));
                }
                if !class_sep.is_finite() {
                    return Err(Error::invalid("class_sep must be finite"));
                }
            }
            SynthMode::Sparse { vocab, min_tokens, max_tokens, zipf_exponent, class_bias, property_tokens } => {
                if property_tokens >= vocab {
                    return Err(Error::invalid("property tokens must leave a background vocabulary"));
                }
                let background = vocab - property_tokens;
                if min_tokens == 0 || min_tokens > max_tokens || max_tokens > background {
                    return Err(Error::invalid("token counts must satisfy 1 <= min <= max <= background vocabulary"));
                }
                if self.property_effect > 0.0 && property_tokens == 0 {
                    return Err(Error::invalid("a sparse property needs property_tokens > 0"));
                }
                if !(zipf_exponent >= 0.0) || !(class_bias >= 0.0) {
                    return Err(Error::invalid("zipf_exponent and class_bias must be non-negative"));
                }
            }
        }
        for (k, &n) in self.sizes.iter().enumerate() {
            joint_counts(n, self.base_rate(k), self.target_corr, self.num_classes)?;
        }
        Ok(())
    }
}

/// Range of correlations achievable between a balanced binary label and a
/// property with prevalence `rate`.
pub fn feasible_correlation(rate: f64) -> (f64, f64) {
    if rate <= 0.0 || rate >= 1.0 {
        return (0.0, 0.0);
    }
    let denom = 0.5 * (rate * (1.0 - rate)).sqrt();
    let lo = ((rate - 0.5).max(0.0) - 0.5 * rate) / denom;
    let hi = (rate.min(0.5) - 0.5 * rate) / denom;
    (lo, hi)
}

/// Exact per-cell counts `[(y, p)]` for `n` examples: labels balanced,
/// property prevalence `rate`, Pearson correlation `corr`.
fn joint_counts(n: usize, rate: f64, corr: f64, classes: usize) -> Result<Vec<((usize, bool), usize)>> {
    if classes > 2 || rate <= 0.0 || rate >= 1.0 {
        // property constant or correlation not controlled: independent cells
        let mut probs = Vec::new();
        for y in 0..classes {
            probs.push(((y, true), rate / classes as f64));
            probs.push(((y, false), (1.0 - rate) / classes as f64));
        }
        return Ok(apportion(n, &probs));
    }
    let (lo, hi) = feasible_correlation(rate);
    if corr < lo - 1e-12 || corr > hi + 1e-12 {
        return Err(Error::InfeasibleCorrelation { corr, rate, min: lo, max: hi });
    }
    let p11 = (0.5 * rate + corr * 0.5 * (rate * (1.0 - rate)).sqrt()).clamp(0.0, rate.min(0.5));
    let probs = [
        ((1, true), p11),
        ((1, false), 0.5 - p11),
        ((0, true), rate - p11),
        ((0, false), 0.5 - rate + p11),
    ];
    Ok(apportion(n, &probs))
}

/// Largest-remainder rounding of `n * p` that sums to `n`.
fn apportion<K: Copy>(n: usize, probs: &[(K, f64)]) -> Vec<(K, usize)> {
    let raw: Vec<f64> = probs.iter().map(|(_, p)| p.max(0.0) * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if probs[i].1 > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    probs.iter().zip(counts).map(|((k, _), c)| (*k, c)).collect()
}

/// Precomputed per-class token distributions for sparse mode.
struct TokenSampler {
    cdfs: Vec<Vec<f64>>,
}

impl TokenSampler {
    fn new(background: usize, classes: usize, zipf: f64, class_bias: f64) -> Self {
        let cdfs = (0..classes)
            .map(|c| {
                let mut acc = 0.0;
                (0..background)
                    .map(|i| {
                        let mut w = 1.0 / ((i + 1) as f64).powf(zipf);
                        if i % classes == c {
                            w *= 1.0 + class_bias;
                        }
                        acc += w;
                        acc
                    })
                    .collect()
            })
            .collect();
        Self { cdfs }
    }

    fn draw(&self, class: usize, rng: &mut SimRng) -> u32 {
        let cdf = &self.cdfs[class];
        let u = rng.random::<f64>() * cdf[cdf.len() - 1];
        cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u32
    }
}

/// Generate every participant's examples, deterministically from `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Vec<Record>>> {
    spec.validate()?;
    let sampler = match spec.mode {
        SynthMode::Sparse { vocab, zipf_exponent, class_bias, property_tokens, .. } => {
            Some(TokenSampler::new(vocab - property_tokens, spec.num_classes, zipf_exponent, class_bias))
        }
        SynthMode::Dense { .. } => None,
    };
    spec.sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut rng = rng_from_seed(derive_seed(spec.seed, "participant", &[k as u64]));
            let mut cells: Vec<(usize, bool)> = joint_counts(n, spec.base_rate(k), spec.target_corr, spec.num_classes)?
                .into_iter()
                .flat_map(|(cell, c)| std::iter::repeat_n(cell, c))
                .collect();
            cells.shuffle(&mut rng);
            Ok(cells
                .into_iter()
                .map(|(label, property)| Record {
                    input: draw_input(spec, sampler.as_ref(), label, property, &mut rng),
                    label,
                    property,
                })
                .collect())
        })
        .collect()
}

fn draw_input(spec: &SynthSpec, sampler: Option<&TokenSampler>, label: usize, property: bool, rng: &mut SimRng) -> Input {
    match spec.mode {
        SynthMode::Dense { dim, class_dims, property_dims, class_sep } => {
            let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            if spec.num_classes == 2 {
                let sign = if label == 1 { 0.5 } else { -0.5 };
                x[..class_dims].iter_mut().for_each(|v| *v += sign * class_sep);
            } else {
                x[label % class_dims] += class_sep;
            }
            if property {
                x[class_dims..class_dims + property_dims].iter_mut().for_each(|v| *v += spec.property_effect);
            }
            Input::Dense(x)
        }
        SynthMode::Sparse { vocab, min_tokens, max_tokens, property_tokens, .. } => {
            let sampler = sampler.expect("sparse sampler");
            let k = rng.random_range(min_tokens..=max_tokens);
            let mut toks = Vec::with_capacity(k + 4);
            let mut attempts = 0;
            while toks.len() < k && attempts < 50 * k {
                let t = sampler.draw(label, rng);
                if !toks.contains(&t) {
                    toks.push(t);
                }
                attempts += 1;
            }
            if property && spec.property_effect > 0.0 {
                let base = spec.property_effect.floor();
                let extra = rng.random::<f64>() < spec.property_effect - base;
                let count = (base as usize + extra as usize).min(property_tokens);
                let first = (vocab - property_tokens) as u32;
                let mut pool: Vec<u32> = (first..vocab as u32).collect();
                pool.shuffle(rng);
                toks.extend_from_slice(&pool[..count]);
            }
            Input::tokens(toks)
        }
    }
}
