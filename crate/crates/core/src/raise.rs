//! Point Raise: synthetic anomalies carved out of the road surface.
//!
//! A random road point seeds a spherical neighbourhood. Every point of that
//! cluster is pulled toward the sensor in the ground plane by a factor
//!
//! ```text
//! s = exp(-a * (d - d_min)),   a = -ln(d_min / d_max) / (gamma * (d_max - d_min))
//! ```
//!
//! where `d` is the point's range, then lifted by an independent uniform
//! height offset and relabelled as the raised class. The nearest point keeps
//! `s = 1` and the farthest gets `s = (d_min / d_max)^(1 / gamma)`; small
//! `gamma` yields compact blobs, large `gamma` flat spread-out patches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMap, PointCloud, ROAD};
use crate::error::{Error, Result};
use crate::rng;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaiseConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Pull factor; larger values weaken the contraction.
    pub gamma: f64,
    /// Semantic classes whose points may seed a cluster.
    pub road_classes: Vec<u16>,
    pub rng_seed: u64,
}

impl Default for RaiseConfig {
    fn default() -> Self {
        RaiseConfig {
            r_min: 0.25,
            r_max: 0.75,
            h_min: 0.25,
            h_max: 0.75,
            gamma: 2.0,
            road_classes: vec![ROAD],
            rng_seed: 0,
        }
    }
}

impl RaiseConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.r_min, self.r_max, self.h_min, self.h_max, self.gamma]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("raise parameters must be finite".into()));
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max) {
            return Err(Error::InvalidConfig(format!(
                "radius range must satisfy 0 < r_min <= r_max, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if self.h_min > self.h_max {
            return Err(Error::InvalidConfig(format!(
                "height range must satisfy h_min <= h_max, got [{}, {}]",
                self.h_min, self.h_max
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.road_classes.is_empty() {
            return Err(Error::InvalidConfig("road_classes is empty".into()));
        }
        Ok(())
    }
}

/// What a single raise did to the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct RaiseResult {
    /// Modified points, sorted ascending.
    pub cluster_indices: Vec<usize>,
    pub center_index: usize,
    pub sampled_radius: f64,
    /// Contraction factor per cluster point, aligned with `cluster_indices`.
    pub scales: Vec<f64>,
    /// Height offset per cluster point, aligned with `cluster_indices`.
    pub heights: Vec<f64>,
    pub d_min: f64,
    pub d_max: f64,
    /// True when the cluster had a single point or zero range spread, in
    /// which case no contraction was applied.
    pub degenerate: bool,
    /// Instance id written into the high label bits.
    pub instance_id: u16,
}

/// Contraction factors for points at ranges `d`.
///
/// Returns `None` when the decay is undefined (fewer than two points, equal
/// extreme ranges, or a point at the origin).
pub fn contraction_scales(ranges: &[f64], gamma: f64) -> Option<(Vec<f64>, f64, f64)> {
    if ranges.len() < 2 {
        return None;
    }
    let d_min = ranges.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = ranges.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(d_min > 0.0) || d_max <= d_min {
        return None;
    }
    let a = -(d_min / d_max).ln() / (gamma * (d_max - d_min));
    let scales = ranges.iter().map(|&d| (-a * (d - d_min)).exp()).collect();
    Some((scales, d_min, d_max))
}

/// Applies one raise to copies of `cloud`/`labels`, seeded by `cfg.rng_seed`.
pub fn point_raise(
    cloud: &PointCloud,
    labels: &LabelMap,
    cfg: &RaiseConfig,
) -> Result<(PointCloud, LabelMap, RaiseResult)> {
    cfg.validate()?;
    labels.check_aligned(cloud)?;
    let mut cloud = cloud.clone();
    let mut labels = labels.clone();
    let mut rng = rng::stream(cfg.rng_seed, 0);
    let result = raise_in_place(&mut cloud, &mut labels, cfg, &mut rng)?;
    Ok((cloud, labels, result))
}

/// Output of [`raise_scene`]; `results.len() < requested` signals an early stop.
#[derive(Debug, Clone)]
pub struct RaisedScene {
    pub cloud: PointCloud,
    pub labels: LabelMap,
    pub results: Vec<RaiseResult>,
    pub requested: usize,
}

impl RaisedScene {
    pub fn stopped_early(&self) -> bool {
        self.results.len() < self.requested
    }
}

/// Applies `count` raises in sequence. Raise `k` draws from ChaCha stream `k`
/// of `cfg.rng_seed`, so `count = 1` matches [`point_raise`]. Stops early
/// once no road point remains.
pub fn raise_scene(
    cloud: &PointCloud,
    labels: &LabelMap,
    cfg: &RaiseConfig,
    count: usize,
) -> Result<RaisedScene> {
    cfg.validate()?;
    labels.check_aligned(cloud)?;
    if count == 0 {
        return Err(Error::InvalidConfig("raise count must be at least 1".into()));
    }
    let mut cloud = cloud.clone();
    let mut labels = labels.clone();
    let mut results = Vec::with_capacity(count.min(1024));
    for k in 0..count {
        let mut rng = rng::stream(cfg.rng_seed, k as u64);
        match raise_in_place(&mut cloud, &mut labels, cfg, &mut rng) {
            Ok(r) => results.push(r),
            Err(Error::NoRoadPoints) if k > 0 => break,
            Err(e) => return Err(e),
        }
    }
    Ok(RaisedScene {
        cloud,
        labels,
        results,
        requested: count,
    })
}

fn raise_in_place(
    cloud: &mut PointCloud,
    labels: &mut LabelMap,
    cfg: &RaiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RaiseResult> {
    let seeds: Vec<usize> = (0..labels.len())
        .filter(|&i| cfg.road_classes.contains(&labels.semantic(i)))
        .collect();
    if seeds.is_empty() {
        return Err(Error::NoRoadPoints);
    }
    let center_index = seeds[rng.gen_range(0..seeds.len())];
    let sampled_radius = cfg.r_min + (cfg.r_max - cfg.r_min) * rng.gen::<f64>();

    // Rebuilt per raise: earlier raises move points.
    let index = SpatialIndex::build(cloud);
    let mut cluster = index.radius_query(cloud.point(center_index).xyz(), sampled_radius);
    cluster.sort_unstable();

    let ranges: Vec<f64> = cluster.iter().map(|&i| cloud.point(i).range()).collect();
    let (scales, d_min, d_max, degenerate) = match contraction_scales(&ranges, cfg.gamma) {
        Some((s, lo, hi)) => (s, lo, hi, false),
        None => {
            let lo = ranges.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ranges.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (vec![1.0; cluster.len()], lo, hi, true)
        }
    };
    let heights: Vec<f64> = (0..cluster.len())
        .map(|_| cfg.h_min + (cfg.h_max - cfg.h_min) * rng.gen::<f64>())
        .collect();

    let raised = labels.raised_class();
    let instance_id = (0..labels.len())
        .filter(|&i| labels.is_raised(i))
        .map(|i| labels.instance(i))
        .max()
        .map_or(1, |m| m.saturating_add(1));

    let points = cloud.points_mut();
    for ((&i, &s), &h) in cluster.iter().zip(&scales).zip(&heights) {
        let p = &mut points[i];
        if s != 1.0 {
            p.x = (p.x as f64 * s) as f32;
            p.y = (p.y as f64 * s) as f32;
        }
        p.z = (p.z as f64 + h) as f32;
        labels.set(i, raised, instance_id);
    }

    Ok(RaiseResult {
        cluster_indices: cluster,
        center_index,
        sampled_radius,
        scales,
        heights,
        d_min,
        d_max,
        degenerate,
        instance_id,
    })
}
