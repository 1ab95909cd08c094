//! End-to-end runs: synthesize, raise, extract features, train, score and
//! evaluate on a train / held-out scene split.
//!
//! Every random draw derives from [`RunConfig::seed`]; the `rng_seed` fields
//! of the nested sections are overwritten per scene and stage.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMap, PointCloud, UNLABELED};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureMatrix};
use crate::io;
use crate::metrics::{dbscan, point_eval, pr_curve, InstanceSet, ObjectTally, PointEval, PrPoint};
use crate::raise::{raise_scene, RaiseConfig};
use crate::rng::{self, derive_seed, Stage};
use crate::scene::{generate_scene, SceneConfig};
use crate::spatial::SpatialIndex;
use crate::training::{save_checkpoint, train, LossConfig, Projector, Standardizer, TrainConfig, TrainSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub iou_threshold: f64,
    /// Decision threshold on the score; the objective's natural threshold
    /// when absent.
    pub threshold: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dbscan_eps: 0.8,
            dbscan_min_pts: 5,
            iou_threshold: 0.5,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub raises_per_scene: usize,
    /// When false, training uses the unlabeled objects as auxiliary OOD data
    /// instead of raised clusters.
    pub raise_enabled: bool,
    /// Training pull factors to sweep; empty disables the sweep.
    pub gamma_sweep: Vec<f64>,
    /// Adds a row without Point Raise to the sweep.
    pub sweep_include_disabled: bool,
    /// Also trains the hinge baseline on the same data.
    pub compare_hinge: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_scenes: 8,
            test_scenes: 4,
            raises_per_scene: 3,
            raise_enabled: true,
            gamma_sweep: Vec::new(),
            sweep_include_disabled: false,
            compare_hinge: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub raise: RaiseConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
    pub split: SplitConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.raise.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        let e = &self.eval;
        if !(e.dbscan_eps > 0.0) || e.dbscan_min_pts == 0 {
            return Err(Error::InvalidConfig("dbscan needs eps > 0 and min_pts >= 1".into()));
        }
        if !(0.0..1.0).contains(&e.iou_threshold) {
            return Err(Error::InvalidConfig("iou_threshold must lie in [0, 1)".into()));
        }
        let s = &self.split;
        if s.train_scenes == 0 || s.test_scenes == 0 || s.raises_per_scene == 0 {
            return Err(Error::InvalidConfig(
                "train_scenes, test_scenes and raises_per_scene must be positive".into(),
            ));
        }
        if s.gamma_sweep.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidConfig("sweep gammas must be positive".into()));
        }
        Ok(())
    }
}

/// One labelled scene with its features.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub cloud: PointCloud,
    pub labels: LabelMap,
    pub features: FeatureMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Generates scene `index` of `split` and optionally raises it.
pub fn prepare_scene(
    cfg: &RunConfig,
    split: Split,
    index: usize,
    raise: Option<&RaiseConfig>,
) -> Result<PreparedScene> {
    let (scene_stage, raise_stage) = match split {
        Split::Train => (Stage::TrainScene, Stage::TrainRaise),
        Split::Test => (Stage::TestScene, Stage::TestRaise),
    };
    let scene_cfg = SceneConfig {
        rng_seed: derive_seed(cfg.seed, scene_stage, index as u64),
        ..cfg.scene.clone()
    };
    let (mut cloud, mut labels) = generate_scene(&scene_cfg)?;
    if let Some(r) = raise {
        let r = RaiseConfig {
            rng_seed: derive_seed(cfg.seed, raise_stage, index as u64),
            ..r.clone()
        };
        let raised = raise_scene(&cloud, &labels, &r, cfg.split.raises_per_scene)?;
        cloud = raised.cloud;
        labels = raised.labels;
    }
    let index = SpatialIndex::build(&cloud);
    let features = extract_features(&cloud, &index)?;
    Ok(PreparedScene {
        cloud,
        labels,
        features,
    })
}

/// Training set over `scenes`. Raised points are auxiliary OOD data and
/// unlabeled points are skipped; with `raise_enabled = false` the unlabeled
/// points become the auxiliary data instead.
pub fn build_train_set(scenes: &[PreparedScene], raise_enabled: bool) -> Result<TrainSet> {
    let mut parts = Vec::with_capacity(scenes.len());
    let mut is_ood = Vec::new();
    for s in scenes {
        let mut rows = Vec::new();
        for i in 0..s.labels.len() {
            let unlabeled = s.labels.semantic(i) == UNLABELED;
            let ood = if raise_enabled {
                if unlabeled {
                    continue;
                }
                s.labels.is_raised(i)
            } else {
                unlabeled
            };
            rows.push(i);
            is_ood.push(ood);
        }
        parts.push(s.features.select_rows(&rows));
    }
    TrainSet::new(FeatureMatrix::vstack(&parts)?, is_ood)
}

/// Fits a standardizer on the training features, trains a fresh projector
/// and folds the standardization into its first layer.
pub fn fit_projector(cfg: &RunConfig, data: &TrainSet, loss: &LossConfig) -> Result<(Projector, Vec<f64>)> {
    let standardizer = Standardizer::fit(&data.features);
    let normalized = TrainSet::new(standardizer.apply(&data.features), data.is_ood.clone())?;
    let mut init_rng = rng::stream(derive_seed(cfg.seed, Stage::Init, 0), 0);
    let init = Projector::new(data.features.cols(), cfg.train.hidden, cfg.train.k, &mut init_rng);
    let train_cfg = TrainConfig {
        rng_seed: derive_seed(cfg.seed, Stage::Shuffle, 0),
        ..cfg.train.clone()
    };
    let (mut projector, history) = train(&init, &normalized, &train_cfg, loss)?;
    projector.fold_input_affine(&standardizer.mean, &standardizer.std)?;
    Ok((projector, history))
}

/// Metrics of one trained model on the held-out scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub point: PointEval,
    pub objects: ObjectTally,
    pub pr_curve: Vec<PrPoint>,
    /// Scores of every test point, scenes concatenated.
    pub scores: Vec<f64>,
}

/// Scores `scenes` and evaluates them. Unlabeled points are excluded from
/// both point and object metrics; positives are raised points.
pub fn evaluate(
    projector: &Projector,
    loss: &LossConfig,
    eval: &EvalConfig,
    scenes: &[PreparedScene],
) -> Result<Evaluation> {
    let tau = eval.threshold.unwrap_or_else(|| loss.default_threshold());
    let mut all_scores = Vec::new();
    let mut kept_scores = Vec::new();
    let mut kept_labels = Vec::new();
    let mut objects = ObjectTally::default();
    for s in scenes {
        let scores = loss.scores(&projector.forward(&s.features)?)?;
        let keep = |i: usize| s.labels.semantic(i) != UNLABELED;
        let mut flagged = Vec::new();
        for (i, &score) in scores.iter().enumerate().filter(|(i, _)| keep(*i)) {
            kept_scores.push(score);
            kept_labels.push(s.labels.is_raised(i));
            if score > tau {
                flagged.push(i);
            }
        }
        let pred = dbscan(&s.cloud, &flagged, eval.dbscan_eps, eval.dbscan_min_pts)?;
        let gt = InstanceSet::from_labels(&s.labels, s.labels.raised_class());
        objects.add(&crate::metrics::object_tally(&pred, &gt, eval.iou_threshold));
        all_scores.extend(scores);
    }
    Ok(Evaluation {
        point: point_eval(&kept_scores, &kept_labels)?,
        objects,
        pr_curve: pr_curve(&kept_scores, &kept_labels)?,
        scores: all_scores,
    })
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run: String,
    pub point: PointEval,
    pub objects: ObjectTally,
}

pub const METRICS_HEADER: &str = "run,auroc,fpr95,ap,recallq,sq,rq,uq,pq";

impl MetricsRow {
    /// Comma-separated values scaled by 100 with two decimals.
    pub fn to_csv(&self) -> String {
        let o = self.objects.eval();
        let vals = [
            self.point.auroc,
            self.point.fpr_at_95,
            self.point.ap,
            o.recall_q,
            o.sq,
            o.rq,
            o.uq,
            o.pq,
        ];
        let mut line = self.run.clone();
        for v in vals {
            write!(line, ",{:.2}", 100.0 * v).unwrap();
        }
        line
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn pr_curve_csv(curve: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in curve {
        writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall).unwrap();
    }
    out
}

pub fn loss_history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        writeln!(out, "{},{}", e + 1, l).unwrap();
    }
    out
}

/// Everything a pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    /// The configured objective first, then the hinge baseline if requested.
    pub rows: Vec<MetricsRow>,
    /// One row per swept gamma, then the disabled row if requested.
    pub sweep: Vec<MetricsRow>,
    pub projector: Projector,
    pub history: Vec<f64>,
    pub evaluation: Evaluation,
}

/// Runs the full experiment and, when `out_dir` is given, writes
/// `checkpoint.bin`, `scores.f32`, `metrics.csv`, `pr_curve.csv`,
/// `loss_history.csv` and `gamma_sweep.csv` (if a sweep was requested).
pub fn run_pipeline(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<PipelineReport> {
    cfg.validate()?;
    let raise = cfg.split.raise_enabled.then_some(&cfg.raise);
    let test: Vec<PreparedScene> = (0..cfg.split.test_scenes)
        .map(|i| prepare_scene(cfg, Split::Test, i, Some(&cfg.raise)))
        .collect::<Result<_>>()?;
    let train_scenes = |raise: Option<&RaiseConfig>| -> Result<Vec<PreparedScene>> {
        (0..cfg.split.train_scenes)
            .map(|i| prepare_scene(cfg, Split::Train, i, raise))
            .collect()
    };
    let run = |scenes: &[PreparedScene], enabled: bool, loss: &LossConfig| {
        let data = build_train_set(scenes, enabled)?;
        let (projector, history) = fit_projector(cfg, &data, loss)?;
        let evaluation = evaluate(&projector, loss, &cfg.eval, &test)?;
        Ok::<_, Error>((projector, history, evaluation))
    };

    let train_data = train_scenes(raise)?;
    let (projector, history, evaluation) = run(&train_data, raise.is_some(), &cfg.loss)?;
    let mut rows = vec![MetricsRow {
        run: cfg.loss.name().to_string(),
        point: evaluation.point,
        objects: evaluation.objects,
    }];
    if cfg.split.compare_hinge && !matches!(cfg.loss, LossConfig::Hinge(_)) {
        let hinge = LossConfig::Hinge(Default::default());
        let (_, _, e) = run(&train_data, raise.is_some(), &hinge)?;
        rows.push(MetricsRow {
            run: hinge.name().to_string(),
            point: e.point,
            objects: e.objects,
        });
    }
    drop(train_data);

    let mut sweep = Vec::new();
    for &gamma in &cfg.split.gamma_sweep {
        let r = RaiseConfig {
            gamma,
            ..cfg.raise.clone()
        };
        let (_, _, e) = run(&train_scenes(Some(&r))?, true, &cfg.loss)?;
        sweep.push(MetricsRow {
            run: format!("{gamma}"),
            point: e.point,
            objects: e.objects,
        });
    }
    if cfg.split.sweep_include_disabled {
        let (_, _, e) = run(&train_scenes(None)?, false, &cfg.loss)?;
        sweep.push(MetricsRow {
            run: "none".to_string(),
            point: e.point,
            objects: e.objects,
        });
    }

    if let Some(dir) = out_dir {
        save_checkpoint_to(dir, &projector)?;
        io::save_scores(&evaluation.scores, dir.join("scores.f32"))?;
        io::write_file(dir.join("metrics.csv"), metrics_csv(&rows))?;
        io::write_file(dir.join("pr_curve.csv"), pr_curve_csv(&evaluation.pr_curve))?;
        io::write_file(dir.join("loss_history.csv"), loss_history_csv(&history))?;
        if !sweep.is_empty() {
            let text = metrics_csv(&sweep).replacen("run,", "gamma,", 1);
            io::write_file(dir.join("gamma_sweep.csv"), text)?;
        }
    }
    Ok(PipelineReport {
        rows,
        sweep,
        projector,
        history,
        evaluation,
    })
}

fn save_checkpoint_to(dir: &Path, projector: &Projector) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(projector, dir.join("checkpoint.bin"))
}
