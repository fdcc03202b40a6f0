//! Logistic-regression scorer used as the batch property classifier.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// One labeled training row for the property classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackExample {
    pub features: Vec<f64>,
    /// `true` for the property class.
    pub label: bool,
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub eta: f64,
    pub l2: f64,
    /// Mini-batch size; 0 trains full-batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { epochs: 200, eta: 0.1, l2: 1e-4, batch_size: 32, seed: 0 }
    }
}

/// Standardize-then-logistic model. Features with zero spread in training are
/// mapped to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl LogisticModel {
    pub fn num_features(&self) -> usize {
        self.weights.len()
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.bias
            + x.iter()
                .zip(&self.mean)
                .zip(&self.inv_std)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| (v - m) * s * w)
                .sum::<f64>()
    }

    /// Probability of the property class; always in `[0, 1]`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::InconsistentFeatures { expected: self.weights.len(), found: x.len() });
        }
        Ok(sigmoid(self.logit(x)))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fit an L2-regularized logistic regression with seeded mini-batch SGD.
pub fn train_binary_classifier(rows: &[AttackExample], cfg: &ClassifierConfig) -> Result<LogisticModel> {
    let first = rows.first().ok_or(Error::SingleClass)?;
    let d = first.features.len();
    if let Some(bad) = rows.iter().find(|r| r.features.len() != d) {
        return Err(Error::InconsistentFeatures { expected: d, found: bad.features.len() });
    }
    let positives = rows.iter().filter(|r| r.label).count();
    if positives == 0 || positives == rows.len() {
        return Err(Error::SingleClass);
    }
    if rows.iter().any(|r| r.features.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("classifier features".into()));
    }

    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(&r.features).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; d];
    for r in rows {
        var.iter_mut().zip(&r.features).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| if v > 1e-300 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.features.iter().zip(&mean).zip(&inv_std).map(|((v, m), s)| (v - m) * s).collect())
        .collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = rng_from_seed(cfg.seed);
    let bs = if cfg.batch_size == 0 { rows.len() } else { cfg.batch_size.min(rows.len()) };
    let mut gw = vec![0.0; d];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = &xs[i];
                let z = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let err = (sigmoid(z) - rows[i].label as u8 as f64) * inv;
                gb += err;
                gw.iter_mut().zip(x).for_each(|(g, xv)| *g += err * xv);
            }
            for (wj, gj) in w.iter_mut().zip(&gw) {
                *wj -= cfg.eta * (gj + cfg.l2 * *wj);
            }
            b -= cfg.eta * gb;
        }
    }
    Ok(LogisticModel { weights: w, bias: b, mean, inv_std })
}
