//! Shared fixtures for the criterion benchmarks.

use rand::Rng;
use rel_core::energy::LogitField;
use rel_core::rng;
use rel_core::scene::{generate_scene, SceneConfig};
use rel_core::{LabelMap, PointCloud};

/// `n` rows of `2k` logits drawn uniformly from `[-10, 10)`.
pub fn random_logits(n: usize, k: usize, seed: u64) -> LogitField {
    let mut r = rng::stream(seed, 0);
    let values = (0..n * 2 * k).map(|_| r.gen_range(-10.0..10.0)).collect();
    LogitField::new(values, k).expect("valid shape")
}

/// Scores with roughly 10% positives shifted upward.
pub fn random_scores(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| {
            let positive = r.gen_bool(0.1);
            let s: f64 = r.gen::<f64>() + if positive { 0.5 } else { 0.0 };
            (s, positive)
        })
        .unzip()
}

/// The default procedural scene.
pub fn default_scene(seed: u64) -> (PointCloud, LabelMap) {
    generate_scene(&SceneConfig {
        rng_seed: seed,
        ..Default::default()
    })
    .expect("default config is valid")
}
