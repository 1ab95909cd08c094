mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rel_core::cloud::{load_scan, save_scan, LabelMap, UNLABELED};
use rel_core::energy::{score_field, LogitField};
use rel_core::experiment::{
    build_train_set, fit_projector, loss_history_csv, metrics_csv, pr_curve_csv, run_pipeline,
    EvalConfig, MetricsRow, PreparedScene, RunConfig,
};
use rel_core::features::extract_features;
use rel_core::io;
use rel_core::metrics::{dbscan, object_tally, point_eval, pr_curve, InstanceSet, Provenance};
use rel_core::raise::{raise_scene, RaiseConfig};
use rel_core::rng::{derive_seed, Stage};
use rel_core::scene::{generate_scene, SceneConfig};
use rel_core::spatial::SpatialIndex;
use rel_core::training::{load_checkpoint, save_checkpoint, HingeLossConfig, LossConfig};

/// Relative-energy OOD detection for LiDAR point clouds.
#[derive(Parser)]
#[command(name = "rel", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural scenes as SemanticKITTI .bin/.label pairs.
    Synth(SynthArgs),
    /// Apply Point Raise to a scan.
    Raise(RaiseArgs),
    /// Train the OOD projector on a directory of labelled scans.
    Train(TrainArgs),
    /// Turn logits, or a checkpoint applied to a scan, into per-point scores.
    Score(ScoreArgs),
    /// Evaluate scores against ground-truth labels.
    Eval(EvalArgs),
    /// Run synth, raise, train, score and eval end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; its values override command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes to generate.
    #[arg(long, default_value_t = 1)]
    scenes: usize,
}

#[derive(Args)]
struct RaiseArgs {
    #[command(flatten)]
    common: Common,
    /// Input scan (.bin with a matching .label).
    scan: PathBuf,
    /// Output scan path; the .label is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Pull factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Radius range as MIN,MAX in meters.
    #[arg(long, value_parser = parse_range)]
    radius: Option<(f64, f64)>,
    /// Height offset range as MIN,MAX in meters.
    #[arg(long, value_parser = parse_range)]
    height: Option<(f64, f64)>,
    /// Number of clusters to raise.
    #[arg(long, default_value_t = 1)]
    count: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossKind {
    Rel,
    Hinge,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of .bin scans with .label files; raised points are the
    /// auxiliary OOD data.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint.bin and loss_history.csv.
    #[arg(long)]
    out: PathBuf,
    /// Training objective [default: rel].
    #[arg(long, value_enum)]
    loss: Option<LossKind>,
    /// Passes over the training points [default: 30].
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Statistic {
    /// Relative energy of the negative over the positive logit half.
    Relative,
    /// Free energy of the positive logit half.
    Energy,
}

#[derive(Args)]
struct ScoreArgs {
    /// Logits file (RLGT header, N x 2K float32).
    #[arg(long, conflicts_with_all = ["checkpoint", "scan"])]
    logits: Option<PathBuf>,
    /// Projector checkpoint; requires --scan.
    #[arg(long, requires = "scan")]
    checkpoint: Option<PathBuf>,
    /// Scan to featurize and score with --checkpoint.
    #[arg(long, requires = "checkpoint")]
    scan: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Statistic::Relative)]
    statistic: Statistic,
    /// Temperature of the energy statistic.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Output scores file (N float32).
    #[arg(long)]
    out: PathBuf,
    /// Also write the scores as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON evaluation settings; values override flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scores file (N float32).
    #[arg(long)]
    scores: PathBuf,
    /// Ground-truth .label file.
    #[arg(long)]
    labels: PathBuf,
    /// Scan used to cluster flagged points with DBSCAN.
    #[arg(long)]
    scan: Option<PathBuf>,
    /// Predicted instance ids (N uint32, 0 = none); overrides DBSCAN.
    #[arg(long)]
    instances: Option<PathBuf>,
    /// Points scoring above this are flagged as OOD [default: 0].
    #[arg(long)]
    threshold: Option<f64>,
    /// DBSCAN neighbourhood radius in meters [default: 0.8].
    #[arg(long)]
    eps: Option<f64>,
    /// DBSCAN core size, the point itself included [default: 5].
    #[arg(long)]
    min_pts: Option<usize>,
    /// IoU above which a prediction matches a ground-truth object [default: 0.5].
    #[arg(long)]
    iou: Option<f64>,
    /// Output directory for metrics.csv and pr_curve.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also train the hinge baseline on the same data.
    #[arg(long)]
    compare_hinge: bool,
    /// Comma-separated training gammas to sweep, e.g. 1,2,4,8.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
    /// Add a sweep row trained without Point Raise.
    #[arg(long)]
    include_disabled: bool,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Raise(a) => raise(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let base = SceneConfig {
        rng_seed: a.common.seed.unwrap_or(0),
        ..Default::default()
    };
    let cfg = config::overlay(base, a.common.config.as_deref())?;
    for i in 0..a.scenes {
        let scene = SceneConfig {
            rng_seed: derive_seed(cfg.rng_seed, Stage::TrainScene, i as u64),
            ..cfg.clone()
        };
        let (cloud, labels) = generate_scene(&scene)?;
        let path = a.out.join(format!("{i:06}.bin"));
        save_scan(&cloud, &labels, &path)?;
        println!("{} {} points", path.display(), cloud.len());
    }
    Ok(())
}

fn raise(a: RaiseArgs) -> Result<()> {
    let mut base = RaiseConfig {
        rng_seed: a.common.seed.unwrap_or(0),
        ..Default::default()
    };
    if let Some(g) = a.gamma {
        base.gamma = g;
    }
    if let Some((lo, hi)) = a.radius {
        (base.r_min, base.r_max) = (lo, hi);
    }
    if let Some((lo, hi)) = a.height {
        (base.h_min, base.h_max) = (lo, hi);
    }
    let cfg = config::overlay(base, a.common.config.as_deref())?;
    let (cloud, labels) = load_labelled(&a.scan)?;
    let raised = raise_scene(&cloud, &labels, &cfg, a.count)?;
    save_scan(&raised.cloud, &raised.labels, &a.out)?;
    for r in &raised.results {
        println!(
            "instance {} center {} radius {:.3} points {} degenerate {}",
            r.instance_id,
            r.center_index,
            r.sampled_radius,
            r.cluster_indices.len(),
            r.degenerate
        );
    }
    if raised.stopped_early() {
        eprintln!(
            "warning: road points ran out after {} of {} raises",
            raised.results.len(),
            raised.requested
        );
    }
    Ok(())
}

fn load_labelled(path: &Path) -> Result<(rel_core::PointCloud, LabelMap)> {
    let (cloud, labels) = load_scan(path)?;
    let labels = labels.with_context(|| format!("no .label file found for {}", path.display()))?;
    Ok((cloud, labels))
}

fn prepare(path: &Path) -> Result<PreparedScene> {
    let (cloud, labels) = load_labelled(path)?;
    let index = SpatialIndex::build(&cloud);
    let features = extract_features(&cloud, &index)?;
    Ok(PreparedScene {
        cloud,
        labels,
        features,
    })
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut base = RunConfig::default();
    if let Some(seed) = common.seed {
        base.seed = seed;
    }
    Ok(base)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut base = run_config(&a.common)?;
    if let Some(kind) = a.loss {
        base.loss = match kind {
            LossKind::Rel => LossConfig::default(),
            LossKind::Hinge => LossConfig::Hinge(HingeLossConfig::default()),
        };
    }
    if let Some(e) = a.epochs {
        base.train.epochs = e;
    }
    let cfg = config::overlay(base, a.common.config.as_deref())?;
    cfg.validate()?;

    let mut scans: Vec<PathBuf> = fs::read_dir(&a.data)
        .with_context(|| format!("reading dataset directory {}", a.data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    scans.sort();
    if scans.is_empty() {
        bail!("no .bin scans in {}", a.data.display());
    }
    let scenes: Vec<PreparedScene> = scans.iter().map(|p| prepare(p)).collect::<Result<_>>()?;
    let data = build_train_set(&scenes, true)?;
    let (projector, history) = fit_projector(&cfg, &data, &cfg.loss)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_checkpoint(&projector, a.out.join("checkpoint.bin"))?;
    io::write_file(a.out.join("loss_history.csv"), loss_history_csv(&history))?;
    println!(
        "trained on {} points from {} scans; final loss {:.6}",
        data.len(),
        scans.len(),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let field: LogitField = match (&a.logits, &a.checkpoint, &a.scan) {
        (Some(path), _, _) => io::load_logits(path)?,
        (None, Some(ckpt), Some(scan)) => {
            let projector = load_checkpoint(ckpt)?;
            let (cloud, _) = load_scan(scan)?;
            let features = extract_features(&cloud, &SpatialIndex::build(&cloud))?;
            projector.forward(&features)?
        }
        _ => bail!("pass --logits, or --checkpoint together with --scan"),
    };
    let scores = match a.statistic {
        Statistic::Relative => score_field(&field).delta_e,
        Statistic::Energy => field.positive_energies(a.temperature)?,
    };
    io::save_scores(&scores, &a.out)?;
    if let Some(csv) = &a.csv {
        let mut text = String::from("index,score\n");
        for (i, s) in scores.iter().enumerate() {
            writeln!(text, "{i},{s}")?;
        }
        io::write_file(csv, text)?;
    }
    println!("scored {} points", scores.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut base = EvalConfig {
        threshold: Some(a.threshold.unwrap_or(0.0)),
        ..Default::default()
    };
    if let Some(v) = a.eps {
        base.dbscan_eps = v;
    }
    if let Some(v) = a.min_pts {
        base.dbscan_min_pts = v;
    }
    if let Some(v) = a.iou {
        base.iou_threshold = v;
    }
    let cfg = config::overlay(base, a.config.as_deref())?;
    let tau = cfg.threshold.unwrap_or(0.0);

    let scores = io::load_scores(&a.scores)?;
    let label_bytes = fs::read(&a.labels).with_context(|| format!("reading {}", a.labels.display()))?;
    let labels = rel_core::cloud::decode_labels(&a.labels, &label_bytes, scores.len())?;
    let keep: Vec<usize> = (0..scores.len()).filter(|&i| labels.semantic(i) != UNLABELED).collect();
    let kept_scores: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
    let kept_labels: Vec<bool> = keep.iter().map(|&i| labels.is_raised(i)).collect();
    let point = point_eval(&kept_scores, &kept_labels)?;
    let curve = pr_curve(&kept_scores, &kept_labels)?;

    let pred = if let Some(path) = &a.instances {
        let ids = io::load_instance_ids(path)?;
        if ids.len() != scores.len() {
            bail!("{} instance ids for {} scores", ids.len(), scores.len());
        }
        InstanceSet::from_ids(&ids, Provenance::Predicted)
            .retain_points(|i| labels.semantic(i) != UNLABELED)
    } else if let Some(scan) = &a.scan {
        let (cloud, _) = load_scan(scan)?;
        if cloud.len() != scores.len() {
            bail!("scan has {} points but there are {} scores", cloud.len(), scores.len());
        }
        let flagged: Vec<usize> = keep.iter().copied().filter(|&i| scores[i] > tau).collect();
        dbscan(&cloud, &flagged, cfg.dbscan_eps, cfg.dbscan_min_pts)?
    } else {
        bail!("object metrics need --scan (for DBSCAN) or --instances");
    };
    let gt = InstanceSet::from_labels(&labels, labels.raised_class());
    let row = MetricsRow {
        run: "eval".into(),
        point,
        objects: object_tally(&pred, &gt, cfg.iou_threshold),
    };
    io::write_file(a.out.join("metrics.csv"), metrics_csv(std::slice::from_ref(&row)))?;
    io::write_file(a.out.join("pr_curve.csv"), pr_curve_csv(&curve))?;
    print!("{}", metrics_csv(&[row]));
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut base = run_config(&a.common)?;
    base.split.compare_hinge |= a.compare_hinge;
    base.split.sweep_include_disabled |= a.include_disabled;
    if !a.sweep.is_empty() {
        base.split.gamma_sweep = a.sweep.clone();
    }
    let cfg = config::overlay(base, a.common.config.as_deref())?;
    let report = run_pipeline(&cfg, Some(&a.out))?;
    print!("{}", metrics_csv(&report.rows));
    if !report.sweep.is_empty() {
        print!("{}", metrics_csv(&report.sweep).replacen("run,", "gamma,", 1));
    }
    Ok(())
}
