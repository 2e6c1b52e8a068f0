//! AUC, macro F1 and group dispersion.

use crate::error::{Error, Result};
use crate::linalg::euclidean;

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` from mid-ranks.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Invalid(format!("AUC labels must be 0/1, found {bad}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("NaN score".into()));
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Invalid("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps mid-ranks integral
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let pos = idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank2_pos += mid2 * pos;
        i = j + 1;
    }
    let n1u = n1 as u128;
    let u2 = rank2_pos - n1u * (n1u + 1);
    Ok(u2 as f64 / (2.0 * n1 as f64 * n0 as f64))
}

/// Unweighted mean of per-class `2tp / (2tp + fp + fn)`; a class with no
/// predictions and no instances scores 0.
pub fn f1_macro(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if pred.is_empty() || k == 0 {
        return Err(Error::Invalid("F1 of an empty set".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions but {} labels", pred.len(), truth.len())));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c >= k) {
        return Err(Error::Invalid(format!("class {bad} outside 0..{k}")));
    }
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fneg = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let sum: f64 = (0..k)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                (2 * tp[c]) as f64 / denom as f64
            }
        })
        .sum();
    Ok(sum / k as f64)
}

/// Mean pairwise Euclidean distance between members of every pair of groups
/// (self-pairs included on the diagonal).
pub fn dispersion(groups: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    if groups.is_empty() {
        return Err(Error::Invalid("dispersion needs at least one group".into()));
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(Error::Invalid(format!("group {i} is empty")));
    }
    let d = groups[0][0].len();
    if groups.iter().flatten().any(|e| e.len() != d) {
        return Err(Error::Shape("embeddings of unequal length".into()));
    }
    let g = groups.len();
    let mut out = vec![vec![0.0; g]; g];
    for i in 0..g {
        for j in i..g {
            let mut s = 0.0;
            for a in &groups[i] {
                for b in &groups[j] {
                    s += euclidean(a, b);
                }
            }
            let v = s / (groups[i].len() * groups[j].len()) as f64;
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}
