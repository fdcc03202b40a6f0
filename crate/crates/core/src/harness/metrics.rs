use crate::error::{Error, Result};

/// Mann-Whitney AUC: `P(pos > neg) + P(pos == neg) / 2`, ties counted exactly.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    // rank-sum with midranks for tied groups
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Precision of the rule `score >= threshold`; 0 when nothing is flagged.
pub fn precision_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let flagged: Vec<bool> = scores.iter().zip(labels).filter(|(s, _)| **s >= threshold).map(|(_, &l)| l).collect();
    if flagged.is_empty() {
        return 0.0;
    }
    flagged.iter().filter(|&&l| l).count() as f64 / flagged.len() as f64
}

/// Main-task AUC: binary AUC on the class-1 probability, or the macro average
/// of one-vs-rest AUCs over classes present in the labels.
pub fn multiclass_auc(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let classes = probs.first().map_or(0, Vec::len);
    if classes == 2 {
        let s: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let l: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        return auc(&s, &l);
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..classes {
        let l: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if l.iter().all(|&v| v) || !l.iter().any(|&v| v) {
            continue;
        }
        let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        total += auc(&s, &l)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::SingleClass);
    }
    Ok(total / used as f64)
}
