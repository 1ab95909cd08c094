//! Threshold-free point-level metrics. Positives are OOD points; a point is
//! flagged when its score is strictly above the threshold.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEval {
    pub auroc: f64,
    pub fpr_at_95: f64,
    pub ap: f64,
}

/// One operating point of the precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    /// Lowest score flagged at this operating point.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

fn counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Calls `f(threshold, tp, fp)` after each group of tied scores, walking from
/// the highest score down.
fn sweep(scores: &[f64], labels: &[bool], mut f: impl FnMut(f64, usize, usize) -> bool) {
    let order = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        if !f(s, tp, fp) {
            return;
        }
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney U over average ranks).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are 1-based; doubled so tied averages stay integral.
    let mut rank_sum2: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let avg2 = (k + 1 + end) as u128; // 2 * mean of ranks k+1..=end
        let tied_pos = order[k..end].iter().filter(|&&i| labels[i]).count() as u128;
        rank_sum2 += avg2 * tied_pos;
        k = end;
    }
    let pos = pos as u128;
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / 2.0 / (pos as f64 * neg as f64))
}

/// False-positive rate at the first operating point (sweeping the threshold
/// down) whose true-positive rate reaches `tpr_target`.
pub fn fpr_at_tpr(scores: &[f64], labels: &[bool], tpr_target: f64) -> Result<f64> {
    let (pos, neg) = counts(scores, labels)?;
    if !(0.0..=1.0).contains(&tpr_target) {
        return Err(Error::InvalidConfig(format!(
            "tpr target must lie in [0, 1], got {tpr_target}"
        )));
    }
    let mut fpr = 1.0;
    sweep(scores, labels, |_, tp, fp| {
        if tp as f64 / pos as f64 >= tpr_target {
            fpr = fp as f64 / neg as f64;
            false
        } else {
            true
        }
    });
    Ok(fpr)
}

/// Precision-recall operating points over descending unique scores.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    let (pos, _) = counts(scores, labels)?;
    let mut out = Vec::new();
    sweep(scores, labels, |threshold, tp, fp| {
        out.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / pos as f64,
        });
        true
    });
    Ok(out)
}

/// Step-wise area under the precision-recall curve,
/// `Σ (R_k - R_{k-1}) P_k` with tied scores grouped.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = pr_curve(scores, labels)?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in curve {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(ap)
}

pub fn point_eval(scores: &[f64], labels: &[bool]) -> Result<PointEval> {
    Ok(PointEval {
        auroc: auroc(scores, labels)?,
        fpr_at_95: fpr_at_tpr(scores, labels, 0.95)?,
        ap: average_precision(scores, labels)?,
    })
}
