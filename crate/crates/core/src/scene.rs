//! Procedural LiDAR-like scenes: concentric road rings around the sensor and
//! a handful of box, pole and wall objects standing on the road.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{encode_label, LabelMap, Point, PointCloud, BUILDING, CAR, POLE, ROAD, UNLABELED};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Yawed cuboid, `size = [length, width, height]`; sides and top sampled.
    Box,
    /// Vertical cylinder, `size = [diameter, _, height]`.
    Cylinder,
    /// Vertical rectangle, `size = [length, _, height]`.
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectTemplate {
    pub shape: Shape,
    pub class: u16,
    pub count: usize,
    /// Surface samples per object.
    pub points: usize,
    pub size_min: [f64; 3],
    pub size_max: [f64; 3],
    pub intensity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub rings: usize,
    /// Angular resolution: samples per ring.
    pub points_per_ring: usize,
    /// Horizontal radius of the innermost ring, meters.
    pub ring_min: f64,
    /// Horizontal radius of the outermost ring, meters.
    pub extent: f64,
    /// Height of the sensor above the road; the road lies at `z = -sensor_height`.
    pub sensor_height: f64,
    pub noise_sigma: f64,
    pub road_intensity: [f64; 2],
    pub objects: Vec<ObjectTemplate>,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let t = |shape, class, count, points, size_min, size_max, intensity| ObjectTemplate {
            shape,
            class,
            count,
            points,
            size_min,
            size_max,
            intensity,
        };
        SceneConfig {
            rings: 40,
            points_per_ring: 448,
            ring_min: 4.0,
            extent: 20.0,
            sensor_height: 1.73,
            noise_sigma: 0.02,
            road_intensity: [0.15, 0.35],
            objects: vec![
                t(Shape::Box, CAR, 6, 400, [3.8, 1.6, 1.4], [4.8, 1.9, 1.7], [0.3, 0.9]),
                t(Shape::Cylinder, POLE, 6, 60, [0.1, 0.0, 2.5], [0.25, 0.0, 4.0], [0.4, 0.7]),
                t(Shape::Wall, BUILDING, 3, 500, [3.0, 0.0, 2.0], [8.0, 0.0, 3.5], [0.2, 0.6]),
                t(Shape::Box, UNLABELED, 3, 120, [0.4, 0.4, 0.6], [0.7, 0.7, 1.1], [0.1, 0.9]),
            ],
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.rings == 0 || self.points_per_ring == 0 {
            return bad("rings and points_per_ring must be positive".into());
        }
        if !(self.ring_min > 0.0 && self.extent >= self.ring_min) {
            return bad(format!(
                "need 0 < ring_min <= extent, got {} and {}",
                self.ring_min, self.extent
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        if !self.sensor_height.is_finite() {
            return bad("sensor_height must be finite".into());
        }
        for o in &self.objects {
            let ok = (0..3).all(|k| o.size_min[k] >= 0.0 && o.size_min[k] <= o.size_max[k])
                && o.intensity[0] <= o.intensity[1];
            if !ok || (o.count > 0 && o.points == 0) {
                return bad(format!("invalid object template {o:?}"));
            }
        }
        Ok(())
    }

    /// Exact number of points [`generate_scene`] produces.
    pub fn point_count(&self) -> usize {
        self.rings * self.points_per_ring
            + self.objects.iter().map(|o| o.count * o.points).sum::<usize>()
    }

    /// Horizontal radius of ring `i`.
    pub fn ring_radius(&self, i: usize) -> f64 {
        if self.rings == 1 {
            return self.ring_min;
        }
        self.ring_min + (self.extent - self.ring_min) * i as f64 / (self.rings - 1) as f64
    }
}

/// Generates a labelled scene. Road points carry `ROAD`; every object gets its
/// template class and a distinct instance id.
pub fn generate_scene(cfg: &SceneConfig) -> Result<(PointCloud, LabelMap)> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.rng_seed, 0);
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
    let ground = -cfg.sensor_height;
    let n = cfg.point_count();
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    for i in 0..cfg.rings {
        let radius = cfg.ring_radius(i);
        let phase = rng.gen::<f64>() * TAU / cfg.points_per_ring as f64;
        for j in 0..cfg.points_per_ring {
            let theta = phase + TAU * j as f64 / cfg.points_per_ring as f64;
            let rho = radius + noise.sample(&mut rng);
            let z = ground + noise.sample(&mut rng);
            let intensity = uniform(&mut rng, cfg.road_intensity);
            points.push(point(rho * theta.cos(), rho * theta.sin(), z, intensity));
            labels.push(ROAD as u32);
        }
    }

    let mut instance: u16 = 0;
    let place_lo = (cfg.ring_min + 1.0).min(cfg.extent);
    let place_hi = (cfg.extent - 1.0).max(place_lo);
    for tpl in &cfg.objects {
        for _ in 0..tpl.count {
            instance = instance.wrapping_add(1);
            let size = [0, 1, 2].map(|k| uniform(&mut rng, [tpl.size_min[k], tpl.size_max[k]]));
            let dist = uniform(&mut rng, [place_lo, place_hi]);
            let bearing = rng.gen::<f64>() * TAU;
            let yaw = rng.gen::<f64>() * TAU;
            let center = [dist * bearing.cos(), dist * bearing.sin()];
            let label = encode_label(tpl.class, instance);
            for _ in 0..tpl.points {
                let local = sample_surface(tpl.shape, size, &mut rng);
                let (s, c) = yaw.sin_cos();
                let x = center[0] + c * local[0] - s * local[1] + noise.sample(&mut rng);
                let y = center[1] + s * local[0] + c * local[1] + noise.sample(&mut rng);
                let z = ground + local[2] + noise.sample(&mut rng);
                points.push(point(x, y, z, uniform(&mut rng, tpl.intensity)));
                labels.push(label);
            }
        }
    }
    Ok((PointCloud::new(points)?, LabelMap::new(labels)))
}

fn point(x: f64, y: f64, z: f64, intensity: f64) -> Point {
    Point::new(x as f32, y as f32, z as f32, intensity as f32)
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Uniform-by-area sample on the object surface in its local frame
/// (origin at the footprint centre, z up from the ground).
fn sample_surface(shape: Shape, [a, b, h]: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let u = rng.gen::<f64>();
    let v = rng.gen::<f64>();
    let w = rng.gen::<f64>();
    match shape {
        Shape::Box => {
            let faces = [a * h, a * h, b * h, b * h, a * b];
            let total: f64 = faces.iter().sum();
            let mut pick = u * total;
            let mut face = faces.len() - 1;
            for (k, area) in faces.iter().enumerate() {
                if pick < *area {
                    face = k;
                    break;
                }
                pick -= area;
            }
            let (x, y) = ((v - 0.5) * a, (v - 0.5) * b);
            match face {
                0 => [x, -b / 2.0, w * h],
                1 => [x, b / 2.0, w * h],
                2 => [-a / 2.0, y, w * h],
                3 => [a / 2.0, y, w * h],
                _ => [x, (w - 0.5) * b, h],
            }
        }
        Shape::Cylinder => {
            let r = a / 2.0;
            let t = u * TAU;
            [r * t.cos(), r * t.sin(), v * h]
        }
        Shape::Wall => [(u - 0.5) * a, 0.0, v * h],
    }
}
