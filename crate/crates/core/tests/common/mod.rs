//! Brute-force reference implementations shared by the integration and
//! acceptance tests. They favour obviousness over speed.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rel_core::cloud::{Point, PointCloud};
use rel_core::metrics::InstanceSet;

/// Counts every positive/negative pair: a win scores 2, a tie 1.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut p, mut n) = (0u128, 0u64, 0u64);
    for i in 0..scores.len() {
        if labels[i] {
            p += 1;
        } else {
            n += 1;
        }
    }
    for i in (0..scores.len()).filter(|&i| labels[i]) {
        for j in (0..scores.len()).filter(|&j| !labels[j]) {
            twice += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / 2.0 / (p as f64 * n as f64)
}

/// Descending unique thresholds; at threshold `t` every score `>= t` is
/// flagged. Returns `(t, tp, fp)` counted from scratch per threshold.
fn operating_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut ts: Vec<f64> = scores.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            let tp = (0..scores.len()).filter(|&i| labels[i] && scores[i] >= t).count();
            let fp = (0..scores.len()).filter(|&i| !labels[i] && scores[i] >= t).count();
            (t, tp, fp)
        })
        .collect()
}

pub fn fpr_at_tpr_sweep(scores: &[f64], labels: &[bool], target: f64) -> f64 {
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    for (_, tp, fp) in operating_points(scores, labels) {
        if tp as f64 / p as f64 >= target {
            return fp as f64 / n as f64;
        }
    }
    1.0
}

pub fn average_precision_enum(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&l| l).count();
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (_, tp, fp) in operating_points(scores, labels) {
        let recall = tp as f64 / p as f64;
        ap += (recall - prev) * (tp as f64 / (tp + fp) as f64);
        prev = recall;
    }
    ap
}

/// Quadratic DBSCAN with the same deterministic border rule: a border point
/// joins the cluster of its nearest core neighbour, ties broken by the
/// lexicographically smallest coordinates.
pub fn dbscan_quadratic(cloud: &PointCloud, indices: &[usize], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
    let xyz: Vec<[f64; 3]> = indices.iter().map(|&i| cloud.point(i).xyz()).collect();
    let n = xyz.len();
    let d2 = |a: usize, b: usize| -> f64 { (0..3).map(|k| (xyz[a][k] - xyz[b][k]).powi(2)).sum() };
    let near = |a: usize, b: usize| d2(a, b) <= eps * eps;
    let core: Vec<bool> = (0..n).map(|a| (0..n).filter(|&b| near(a, b)).count() >= min_pts).collect();

    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in (0..n).filter(|&s| core[s]) {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if core[b] && comp[b] == usize::MAX && near(a, b) {
                    comp[b] = next;
                    stack.push(b);
                }
            }
        }
        next += 1;
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in 0..n {
        let c = if core[a] {
            Some(comp[a])
        } else {
            (0..n)
                .filter(|&b| core[b] && near(a, b))
                .min_by(|&x, &y| {
                    d2(a, x)
                        .total_cmp(&d2(a, y))
                        .then_with(|| xyz[x].partial_cmp(&xyz[y]).unwrap())
                })
                .map(|b| comp[b])
        };
        if let Some(c) = c {
            clusters.entry(c).or_default().push(indices[a]);
        }
    }
    let mut out: Vec<Vec<usize>> = clusters
        .into_values()
        .map(|mut v| {
            v.sort_unstable();
            v
        })
        .collect();
    out.sort_by_key(|v| v[0]);
    out
}

/// Object metrics by enumerating all IoU pairs with set arithmetic.
/// Returns `(tp, fp, fn, iou_sum)`.
pub fn object_counts_exhaustive(pred: &InstanceSet, gt: &InstanceSet, thr: f64) -> (usize, usize, usize, f64) {
    let sets = |s: &InstanceSet| -> Vec<BTreeSet<usize>> {
        s.instances.iter().map(|m| m.iter().copied().collect()).collect()
    };
    let (p, g) = (sets(pred), sets(gt));
    let mut matched_p = BTreeSet::new();
    let mut matched_g = BTreeSet::new();
    let mut iou_sum = 0.0;
    for (i, a) in p.iter().enumerate() {
        for (j, b) in g.iter().enumerate() {
            let inter = a.intersection(b).count() as f64;
            let union = a.union(b).count() as f64;
            let iou = inter / union;
            if iou > thr {
                assert!(matched_p.insert(i), "pred {i} matched twice");
                assert!(matched_g.insert(j), "gt {j} matched twice");
                iou_sum += iou;
            }
        }
    }
    let tp = matched_p.len();
    (tp, p.len() - tp, g.len() - tp, iou_sum)
}

/// Random scores on a coarse grid (so ties occur) with both classes present.
pub fn random_scored(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    loop {
        let levels = rng.gen_range(2..=n.max(2));
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / 4.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

/// Points in a few blobs plus background on a 5 cm grid.
pub fn random_blobs(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let centers: Vec<[f32; 3]> = (0..rng.gen_range(1..5))
        .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..2.0)])
        .collect();
    let q = |v: f32| (v * 20.0).round() / 20.0;
    let pts = (0..n)
        .map(|_| {
            let c = if rng.gen_bool(0.8) {
                centers[rng.gen_range(0..centers.len())]
            } else {
                [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(0.0..3.0)]
            };
            let j = |v: f32, rng: &mut ChaCha8Rng| q(v + rng.gen_range(-0.6..0.6));
            Point::new(j(c[0], rng), j(c[1], rng), j(c[2], rng), 0.0)
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

/// A random disjoint instance set over `0..n` built from random label draws.
pub fn random_instances(rng: &mut ChaCha8Rng, n: usize, max_instances: u32) -> Vec<u32> {
    (0..n).map(|_| rng.gen_range(0..=max_instances)).collect()
}

/// Copies `ids` and reassigns each point to a random id with probability `p`.
pub fn perturbed_ids(rng: &mut ChaCha8Rng, ids: &[u32], p: f64, max_instances: u32) -> Vec<u32> {
    ids.iter()
        .map(|&v| if rng.gen_bool(p) { rng.gen_range(0..=max_instances + 1) } else { v })
        .collect()
}

use rel_core::energy::{grouped_probabilities, relative_energy, score_field};
use rel_core::features::FeatureMatrix;
use rel_core::training::{backward, hinge_energy_loss, rel_loss, LossConfig, Projector};

/// Worst deviations of the relative-energy identities over one logit vector:
/// `(|ΔE - log(p_neg / p_pos)|, |ΔE(f + c) - ΔE(f)|)`.
pub fn identity_errors(logits: &[f64], shift: f64) -> (f64, f64) {
    let de = relative_energy(logits).unwrap();
    let (p_pos, p_neg) = grouped_probabilities(logits).unwrap();
    // Log-ratio from the grouped masses, guarded against underflow by
    // working in the log domain when a mass vanishes.
    let log_ratio = if p_pos > 0.0 && p_neg > 0.0 {
        (p_neg / p_pos).ln()
    } else {
        let k = logits.len() / 2;
        let lse = |v: &[f64]| {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        };
        lse(&logits[k..]) - lse(&logits[..k])
    };
    let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
    let de_shift = relative_energy(&shifted).unwrap();
    ((de - log_ratio).abs(), (de_shift - de).abs())
}

/// Loss value computed through the public forward pass.
pub fn loss_value(p: &Projector, x: &FeatureMatrix, ood: &[bool], loss: &LossConfig) -> f64 {
    let logits = p.forward(x).unwrap();
    match loss {
        LossConfig::Rel(c) => rel_loss(&score_field(&logits), ood, c).unwrap().loss,
        LossConfig::Hinge(c) => hinge_energy_loss(&logits, ood, c).unwrap().loss,
    }
}

/// ReLU on/off pattern of both hidden layers for every row.
fn relu_pattern(p: &Projector, x: &FeatureMatrix) -> Vec<bool> {
    let layer = |l: &rel_core::training::Linear, input: &[f64]| -> Vec<f64> {
        (0..l.n_out)
            .map(|o| {
                let w = &l.weight[o * l.n_in..(o + 1) * l.n_in];
                l.bias[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    };
    let mut out = Vec::new();
    for i in 0..x.rows() {
        let z1 = layer(&p.layers[0], x.row(i));
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let z2 = layer(&p.layers[1], &a1);
        out.extend(z1.iter().chain(&z2).map(|&v| v > 0.0));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameters whose perturbation flips a ReLU; finite differences are
    /// meaningless across the kink.
    pub skipped: usize,
}

/// Compares every analytic parameter gradient from [`backward`] with a
/// central difference of step `h`. Relative error uses
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(p: &Projector, x: &FeatureMatrix, ood: &[bool], loss: &LossConfig, h: f64, floor: f64) -> GradCheck {
    let (_, grads) = backward(p, x, ood, loss).unwrap();
    let base_pattern = relu_pattern(p, x);
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut q = p.clone();
    let mut res = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (t, grad_t) in analytic.iter().enumerate() {
        for j in 0..grad_t.len() {
            let orig = q.tensors()[t][j];
            q.tensors_mut()[t][j] = orig + h;
            let (plus, pat_plus) = (loss_value(&q, x, ood, loss), relu_pattern(&q, x));
            q.tensors_mut()[t][j] = orig - h;
            let (minus, pat_minus) = (loss_value(&q, x, ood, loss), relu_pattern(&q, x));
            q.tensors_mut()[t][j] = orig;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                res.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad_t[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            res.max_rel_err = res.max_rel_err.max(err);
            res.checked += 1;
        }
    }
    res
}

/// A random projector, a batch of standard-normal-ish features and a mixed
/// partition with at least one point of each kind.
pub fn random_batch(rng: &mut ChaCha8Rng, rows: usize, d_in: usize, hidden: usize, k: usize) -> (Projector, FeatureMatrix, Vec<bool>) {
    let p = Projector::new(d_in, hidden, k, rng);
    let data: Vec<f64> = (0..rows * d_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let x = FeatureMatrix::new(data, d_in).unwrap();
    let mut ood: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.3)).collect();
    ood[0] = false;
    ood[rows - 1] = true;
    (p, x, ood)
}
