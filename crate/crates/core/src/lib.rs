//! Point-wise out-of-distribution detection for LiDAR scans with relative
//! energy scoring.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`cloud`] and [`spatial`]: scans, SemanticKITTI I/O and KD-tree search.
//! - [`scene`] and [`features`]: procedural scenes and per-point features.
//! - [`raise`]: Point Raise anomaly synthesis.
//! - [`energy`]: free energy, relative energy and the decision rule.
//! - [`training`]: the OOD projector, its objectives and AdamW.
//! - [`metrics`]: AUROC, FPR@95, AP, DBSCAN instances and panoptic metrics.
//! - [`experiment`]: end-to-end runs driven by a [`RunConfig`].

pub mod cloud;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod features;
pub mod io;
pub mod metrics;
pub mod raise;
pub mod rng;
pub mod scene;
pub mod spatial;
pub mod training;

pub use cloud::{load_scan, save_scan, LabelMap, Point, PointCloud, RAISED_CLASS};
pub use energy::{
    classify, free_energy, grouped_probabilities, relative_energy, score_field, Decision,
    LogitField, ScoreField,
};
pub use error::{Error, Result};
pub use experiment::RunConfig;
pub use features::{extract_features, FeatureMatrix, FEATURE_DIM};
pub use raise::{point_raise, raise_scene, RaiseConfig, RaiseResult};
pub use scene::{generate_scene, SceneConfig};
pub use spatial::SpatialIndex;
pub use training::{
    backward, hinge_energy_loss, rel_loss, train, HingeLossConfig, LossConfig, Projector,
    RelLossConfig, TrainConfig, TrainSet,
};
