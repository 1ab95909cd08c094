//! Object-level evaluation under panoptic-style IoU matching.
//!
//! Predicted and ground-truth instances are matched one-to-one when their IoU
//! exceeds the threshold (greedy by descending IoU, which is unique for
//! thresholds of 0.5 and above). From the matches:
//!
//! - `SQ = Σ IoU / TP`
//! - `RQ = TP / (TP + FP/2 + FN/2)`
//! - `PQ = SQ · RQ`
//! - `RecallQ = TP / (TP + FN)` (object recall)
//! - `UQ = Σ IoU / (TP + FN)` (IoU-weighted recall)

use std::collections::BTreeMap;

use crate::cloud::LabelMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Predicted,
    GroundTruth,
}

/// Disjoint instances, each a sorted list of point indices, ordered by their
/// smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSet {
    pub instances: Vec<Vec<usize>>,
    pub provenance: Provenance,
}

impl InstanceSet {
    /// Canonicalises and checks disjointness. Empty instances are dropped.
    pub fn new(mut instances: Vec<Vec<usize>>, provenance: Provenance) -> Result<Self> {
        instances.retain(|m| !m.is_empty());
        for m in &mut instances {
            m.sort_unstable();
            m.dedup();
        }
        instances.sort_by_key(|m| m[0]);
        let mut all: Vec<usize> = instances.iter().flatten().copied().collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != total {
            return Err(Error::InvalidConfig("instances overlap".into()));
        }
        Ok(InstanceSet {
            instances,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Ground-truth instances: points of semantic `class` grouped by their
    /// instance bits.
    pub fn from_labels(labels: &LabelMap, class: u16) -> Self {
        let mut groups: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for i in (0..labels.len()).filter(|&i| labels.semantic(i) == class) {
            groups.entry(labels.instance(i)).or_default().push(i);
        }
        Self::new(groups.into_values().collect(), Provenance::GroundTruth)
            .expect("label groups are disjoint")
    }

    /// Instances from a per-point id array where 0 means "no instance".
    pub fn from_ids(ids: &[u32], provenance: Provenance) -> Self {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &id) in ids.iter().enumerate().filter(|(_, &id)| id != 0) {
            groups.entry(id).or_default().push(i);
        }
        Self::new(groups.into_values().collect(), provenance).expect("id groups are disjoint")
    }

    /// Per-point ids (1-based instance number, 0 for none) over `n` points.
    pub fn to_ids(&self, n: usize) -> Vec<u32> {
        let mut ids = vec![0u32; n];
        for (k, m) in self.instances.iter().enumerate() {
            for &i in m {
                ids[i] = k as u32 + 1;
            }
        }
        ids
    }

    /// Drops the points for which `keep` is false.
    pub fn retain_points(&self, keep: impl Fn(usize) -> bool) -> Self {
        let instances = self
            .instances
            .iter()
            .map(|m| m.iter().copied().filter(|&i| keep(i)).collect())
            .collect();
        Self::new(instances, self.provenance).expect("subsets stay disjoint")
    }
}

/// IoU of two sorted index lists.
pub fn iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Raw matching counts; summing tallies over scenes and then calling
/// [`ObjectTally::eval`] gives dataset-level metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectTally {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub iou_sum: f64,
}

impl ObjectTally {
    pub fn add(&mut self, other: &ObjectTally) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_sum += other.iou_sum;
    }

    pub fn eval(&self) -> ObjectEval {
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let tp = self.tp as f64;
        let sq = ratio(self.iou_sum, tp);
        let rq = ratio(tp, tp + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64);
        ObjectEval {
            recall_q: ratio(tp, tp + self.fn_ as f64),
            sq,
            rq,
            uq: ratio(self.iou_sum, tp + self.fn_ as f64),
            pq: sq * rq,
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectEval {
    pub recall_q: f64,
    pub sq: f64,
    pub rq: f64,
    pub uq: f64,
    pub pq: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Matched `(pred, gt, iou)` triples.
pub fn match_instances(pred: &InstanceSet, gt: &InstanceSet, iou_threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut candidates = Vec::new();
    for (p, pm) in pred.instances.iter().enumerate() {
        for (g, gm) in gt.instances.iter().enumerate() {
            let v = iou(pm, gm);
            if v > iou_threshold {
                candidates.push((p, g, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut matches = Vec::new();
    for (p, g, v) in candidates {
        if !used_p[p] && !used_g[g] {
            used_p[p] = true;
            used_g[g] = true;
            matches.push((p, g, v));
        }
    }
    matches
}

pub fn object_tally(pred: &InstanceSet, gt: &InstanceSet, iou_threshold: f64) -> ObjectTally {
    let matches = match_instances(pred, gt, iou_threshold);
    let tp = matches.len();
    ObjectTally {
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
        iou_sum: matches.iter().map(|m| m.2).sum(),
    }
}

pub fn object_eval(pred: &InstanceSet, gt: &InstanceSet, iou_threshold: f64) -> ObjectEval {
    object_tally(pred, gt, iou_threshold).eval()
}
