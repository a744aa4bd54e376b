use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vadrank_core::config::Config;
use vadrank_core::dataset::{
    synth_image_scene, synth_vector_scene, write_feature_csv, write_ground_truth, write_image_frames,
    load_ground_truth, GroundTruth,
};
use vadrank_core::eval::{auc, curve_csv, write_report, ReportRow};
use vadrank_core::hitl::expert_feedback;
use vadrank_core::initdetect::initial_scores;
use vadrank_core::learner::ArchKind;
use vadrank_core::rundir::{Dataset, DatasetSpec, RunDir};
use vadrank_core::selftrain::{ensemble_score, run_self_training, SelfTrainEvent};
use vadrank_core::{Provenance, ScoreVector};

#[derive(Parser)]
#[command(name = "vadrank", version, about = "Unsupervised video anomaly ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene to disk.
    Gen(GenArgs),
    /// Score frames with the Sp + iForest initial detector.
    InitDetect {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output CSV of (frame_id, score).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run self-training into a run directory, resuming if possible.
    Selftrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// AUC of a score file against ground truth.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Also write the ROC curve here.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Repeat runs over seeds and write an AUC report.
    Ablate(AblateArgs),
    /// Drive feedback rounds on a finished run using its ground truth.
    SimulateHitl {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        /// Fine-tuning seed.
        #[arg(long)]
        seed: u64,
        /// Overrides for `hitl_*` keys.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Serve the JSON API over a run directory.
    Serve {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Vector,
    Image,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "vector")]
    kind: SceneKind,
    #[arg(long, default_value_t = 400)]
    k_normal: usize,
    #[arg(long, default_value_t = 40)]
    k_anomaly: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// JSON dataset description (see `gen`, which writes one).
    #[arg(long, conflicts_with_all = ["features", "manifest"])]
    dataset: Option<PathBuf>,
    /// Feature CSV, one frame per row.
    #[arg(long, conflicts_with = "manifest")]
    features: Option<PathBuf>,
    /// Text file listing one PGM per line.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

impl DataArgs {
    fn spec(&self) -> Result<Option<DatasetSpec>> {
        let gt = self.ground_truth.clone().map(absolute).transpose()?;
        Ok(match (&self.dataset, &self.features, &self.manifest) {
            (Some(p), _, _) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
            }
            (_, Some(p), _) => Some(DatasetSpec::Csv {
                path: absolute(p.clone())?,
                ground_truth: gt,
            }),
            (_, _, Some(p)) => Some(DatasetSpec::Images {
                manifest: absolute(p.clone())?,
                ground_truth: gt,
            }),
            _ => None,
        })
    }

    fn require(&self) -> Result<DatasetSpec> {
        self.spec()?
            .context("one of --dataset, --features or --manifest is required")
    }
}

fn absolute(p: PathBuf) -> Result<PathBuf> {
    std::path::absolute(&p).with_context(|| format!("resolving {}", p.display()))
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// mlp, conv-gap, conv-gap-linear or auto.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    anomaly_fraction: Option<f64>,
    #[arg(long)]
    normal_fraction: Option<f64>,
}

fn apply_sets(cfg: &mut Config, sets: &[String]) -> Result<()> {
    for kv in sets {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(())
}

impl ConfigArgs {
    fn build(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        apply_sets(&mut cfg, &self.set)?;
        let flags = [
            ("iterations", self.iterations.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("arch", self.arch.clone()),
            ("anomaly_fraction", self.anomaly_fraction.map(|v| v.to_string())),
            ("normal_fraction", self.normal_fraction.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.set("seed", &self.seed.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    AnomalyRate,
    Iterations,
    Backbone,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    sweep: Sweep,
    /// Dataset for the iterations and backbone sweeps; a synthetic vector
    /// scene per repeat when absent.
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Repeats; repeat j uses seed + j.
    #[arg(long, default_value_t = 10)]
    repeats: u64,
    /// Frames per synthetic scene.
    #[arg(long, default_value_t = 440)]
    total: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    /// True anomaly rates for the anomaly-rate sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15,0.2")]
    rates: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::InitDetect { data, config, out } => {
            let cfg = config.build()?;
            let ds = data.require()?.load()?;
            let s = initial_scores(&ds.frames, &cfg.run.detect, cfg.run.seed)?;
            s.write_csv(&out)?;
            report_auc("initial", &s, ds.truth.as_ref())?;
            Ok(())
        }
        Command::Selftrain { data, config, run_dir } => selftrain(data, config, &run_dir),
        Command::Eval {
            scores,
            ground_truth,
            curve,
        } => {
            let s = ScoreVector::read_csv(&scores, Provenance::Ensemble)?;
            let gt = load_ground_truth(&ground_truth)?;
            let roc = auc(&s, &gt)?;
            println!("auc={:.6}", roc.auc);
            if let Some(p) = curve {
                fs::write(&p, curve_csv(&roc)).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(())
        }
        Command::Ablate(a) => ablate(a),
        Command::SimulateHitl {
            run_dir,
            rounds,
            seed,
            set,
        } => simulate(&run_dir, rounds, seed, &set),
        Command::Serve { run_dir, port } => tokio::runtime::Runtime::new()?
            .block_on(vadrank_service::serve(&run_dir, port)),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let out = absolute(a.out.clone())?;
    let gt_path = out.join("ground_truth.csv");
    let spec = match a.kind {
        SceneKind::Vector => {
            let (frames, gt) = synth_vector_scene(a.k_normal, a.k_anomaly, a.dim, a.separation, a.seed)?;
            let path = out.join("features.csv");
            write_feature_csv(&path, &frames)?;
            write_ground_truth(&gt_path, &gt)?;
            DatasetSpec::Csv {
                path,
                ground_truth: Some(gt_path),
            }
        }
        SceneKind::Image => {
            let scene = synth_image_scene(a.k_normal, a.k_anomaly, a.height, a.width, a.seed)?;
            let manifest = write_image_frames(out.join("frames"), &scene.frames)?;
            write_ground_truth(&gt_path, &scene.truth)?;
            let mut boxes = String::from("frame_id,row,col,height,width\n");
            for (i, b) in scene.boxes.iter().enumerate() {
                if let Some(b) = b {
                    let _ = writeln!(boxes, "{i},{},{},{},{}", b.row, b.col, b.height, b.width);
                }
            }
            fs::write(out.join("boxes.csv"), boxes)?;
            DatasetSpec::Images {
                manifest,
                ground_truth: Some(gt_path),
            }
        }
    };
    let spec_path = out.join("dataset.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&spec)?)?;
    println!("{}", spec_path.display());
    Ok(())
}

fn report_auc(label: &str, s: &ScoreVector, gt: Option<&GroundTruth>) -> Result<()> {
    if let Some(gt) = gt.filter(|g| g.has_both_classes()) {
        println!("{label} auc={:.6}", auc(s, gt)?.auc);
    }
    Ok(())
}

fn selftrain(data: DataArgs, config: ConfigArgs, root: &Path) -> Result<()> {
    let cfg = config.build()?;
    let existing = RunDir::at(root);
    let dir = match data.spec()? {
        Some(spec) => {
            let same = existing.is_initialised()
                && existing.load_config().ok().as_ref() == Some(&cfg)
                && existing.load_dataset_spec().ok().as_ref() == Some(&spec);
            if same {
                existing
            } else {
                RunDir::create(root, &cfg, &spec)?
            }
        }
        None if existing.is_initialised() => {
            if existing.load_config()? != cfg {
                bail!("{} was created with a different config; pass the dataset to start over", root.display());
            }
            existing
        }
        None => bail!("{} is not a run directory; pass a dataset", root.display()),
    };
    let ds: Dataset = dir.load_dataset_spec()?.load()?;
    if let Some(gt) = &ds.truth {
        dir.write_ground_truth(gt)?;
    }
    let truth = ds.truth.as_ref();
    let mut lines = Vec::new();
    let run = dir.execute(&ds.frames, &cfg, &mut |ev| match ev {
        SelfTrainEvent::Initial(s) => lines.push(("initial".to_string(), s.clone())),
        SelfTrainEvent::Iteration(r) => lines.push((format!("iteration {}", r.iteration), r.scores.clone())),
        SelfTrainEvent::Epoch { .. } => {}
    })?;
    for (label, s) in &lines {
        report_auc(label, s, truth)?;
    }
    report_auc("ensemble", &ensemble_score(&run.ensemble(), &ds.frames)?, truth)?;
    println!("{}", dir.root().display());
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Initial, per-prefix and final ensemble AUCs of one run.
fn run_curve(ds: &Dataset, cfg: &Config) -> Result<Vec<f64>> {
    let gt = ds
        .truth
        .as_ref()
        .filter(|g| g.has_both_classes())
        .context("ablation needs ground truth with both classes")?;
    let run = run_self_training(&ds.frames, &cfg.run)?;
    let mut out = vec![auc(&run.initial, gt)?.auc];
    for s in run.prefix_ensembles() {
        out.push(auc(&s, gt)?.auc);
    }
    Ok(out)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = a.config.build()?;
    let given = a.data.spec()?;
    let scene = |seed: u64, k_anomaly: usize| -> Result<Dataset> {
        let spec = match &given {
            Some(s) => s.clone(),
            None => DatasetSpec::SynthVector {
                k_normal: a.total - k_anomaly,
                k_anomaly,
                dim: a.dim,
                separation: a.separation,
                seed,
            },
        };
        Ok(spec.load()?)
    };
    let default_anomalies = a.total / 11;
    let mut groups: Vec<(String, Config, Option<usize>)> = Vec::new();
    match a.sweep {
        Sweep::AnomalyRate => {
            if given.is_some() {
                bail!("the anomaly-rate sweep builds its own synthetic scenes");
            }
            for &r in &a.rates {
                let k_a = (r * a.total as f64).round() as usize;
                groups.push((format!("rate={r}"), base.clone(), Some(k_a)));
            }
        }
        Sweep::Iterations => groups.push(("iterations".into(), base.clone(), Some(default_anomalies))),
        Sweep::Backbone => {
            let probe = scene(base.run.seed, default_anomalies)?;
            for kind in [ArchKind::Mlp, ArchKind::ConvGap, ArchKind::ConvGapLinear] {
                let mut cfg = base.clone();
                cfg.set("arch", &kind.to_string())?;
                if cfg.run.architecture(&probe.frames).is_err() {
                    eprintln!("skipping {kind}: does not fit {}", probe.frames.shape());
                    continue;
                }
                groups.push((format!("arch={kind}"), cfg, Some(default_anomalies)));
            }
        }
    }
    let mut rows = Vec::new();
    for (name, cfg, k_a) in &groups {
        let mut gains = Vec::new();
        let mut curves: Vec<Vec<f64>> = Vec::new();
        for j in 0..a.repeats {
            let seed = base.run.seed + j;
            let ds = scene(seed, k_a.unwrap_or(default_anomalies))?;
            let mut c = cfg.clone();
            c.set_seed(seed);
            let curve = run_curve(&ds, &c)?;
            for (t, &v) in curve.iter().enumerate() {
                rows.push(ReportRow {
                    dataset: name.clone(),
                    seed,
                    iteration: t,
                    auc: v,
                });
            }
            gains.push(curve.last().unwrap() - curve[0]);
            curves.push(curve);
        }
        let per_t: Vec<String> = (0..curves[0].len())
            .map(|t| format!("{:.4}", median(curves.iter().map(|c| c[t]).collect())))
            .collect();
        let not_worse = gains.iter().filter(|g| **g >= 0.0).count();
        println!(
            "{name}: median gain {:+.4}, not worse {not_worse}/{}, median auc by t [{}]",
            median(gains.clone()),
            gains.len(),
            per_t.join(", ")
        );
    }
    write_report(&a.out, &rows)?;
    Ok(())
}

fn simulate(root: &Path, rounds: usize, seed: u64, sets: &[String]) -> Result<()> {
    let dir = RunDir::at(root);
    if !dir.is_initialised() {
        bail!("{} is not a run directory", root.display());
    }
    let mut cfg = dir.load_config()?;
    for kv in sets {
        if !kv.starts_with("hitl_") {
            bail!("simulate-hitl only overrides hitl_* keys, got {kv:?}");
        }
    }
    apply_sets(&mut cfg, sets)?;
    cfg.hitl.seed = seed;
    let ds = dir.load_dataset_spec()?.load()?;
    let gt = match ds.truth.clone() {
        Some(gt) => gt,
        None => dir
            .load_ground_truth()?
            .context("simulation needs ground truth")?,
    };
    let run = dir
        .load_run(&ds.frames, &cfg)?
        .context("self-training has not finished in this run directory")?;
    dir.clear_session()?;
    let mut session = dir.open_session(&ds.frames, &cfg, &run)?;
    let mut trajectory = vec![auc(session.scores(), &gt)?.auc];
    for _ in 0..rounds {
        let fb = expert_feedback(&session, &gt, cfg.hitl.k);
        session = dir.apply_round(session, &ds.frames, fb)?;
        trajectory.push(auc(session.scores(), &gt)?.auc);
    }
    let mut csv = String::from("round,auc\n");
    for (r, v) in trajectory.iter().enumerate() {
        let _ = writeln!(csv, "{r},{v}");
        println!("round {r} auc={v:.6}");
    }
    let path = dir.session_dir().join("trajectory.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
