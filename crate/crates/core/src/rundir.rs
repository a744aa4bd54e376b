//! On-disk layout of a run and resumable execution on top of it.
//!
//! ```text
//! run/
//!   config.txt              flat key=value
//!   dataset.json            where the frames come from
//!   ground_truth.csv        only when labels are known
//!   iter_0/scores.csv       initial fused scores
//!   iter_i/model.ckpt       learner after iteration i
//!   iter_i/scores.csv
//!   labels_i.csv            pseudo labels used for iteration i
//!   scores.csv              ensemble scores
//!   log.jsonl               one JSON object per event
//!   session/round_r/model.ckpt    fine-tuned last member, or
//!   session/round_r/model_j.ckpt  every member j when the whole
//!                                 ensemble is fine-tuned
//!   session/round_r/scores.csv
//!   session/feedback.jsonl  one Feedback per applied round
//! ```
//!
//! Every file is written through a temporary sibling and renamed, so an
//! interrupted write never leaves a half-written artifact under its final
//! name. Reopening a directory validates every artifact it finds and names
//! the first one that does not parse.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::{
    load_feature_csv, load_ground_truth, load_image_frames, synth_image_scene, synth_vector_scene,
    write_ground_truth, BoundingBox, FrameSet, GroundTruth,
};
use crate::error::{Error, Result};
use crate::hitl::{apply_feedback_observed, start_session, Feedback, Session};
use crate::learner::{load_checkpoint, save_checkpoint, ScoringModel};
use crate::scores::{Provenance, ScoreVector};
use crate::selftrain::{
    ensemble_score, resume_self_training, select_pseudo_labels, IterationRecord, SelfTrainEvent,
    SelfTrainingRun,
};
use crate::initdetect::initial_scores;

/// Where a run's frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    SynthVector {
        k_normal: usize,
        k_anomaly: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
    SynthImage {
        k_normal: usize,
        k_anomaly: usize,
        height: usize,
        width: usize,
        seed: u64,
    },
    /// Feature CSV, one frame per row.
    Csv {
        path: PathBuf,
        #[serde(default)]
        ground_truth: Option<PathBuf>,
    },
    /// Manifest listing one PGM per line.
    Images {
        manifest: PathBuf,
        #[serde(default)]
        ground_truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: FrameSet,
    pub truth: Option<GroundTruth>,
    /// Planted squares, synthetic image scenes only.
    pub boxes: Option<Vec<Option<BoundingBox>>>,
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        let truth = |p: &Option<PathBuf>, k: usize| -> Result<Option<GroundTruth>> {
            let Some(p) = p else { return Ok(None) };
            let gt = load_ground_truth(p)?;
            if gt.len() != k {
                return Err(Error::LengthMismatch {
                    left: gt.len(),
                    right: k,
                });
            }
            Ok(Some(gt))
        };
        Ok(match self {
            Self::SynthVector {
                k_normal,
                k_anomaly,
                dim,
                separation,
                seed,
            } => {
                let (frames, gt) = synth_vector_scene(*k_normal, *k_anomaly, *dim, *separation, *seed)?;
                Dataset {
                    frames,
                    truth: Some(gt),
                    boxes: None,
                }
            }
            Self::SynthImage {
                k_normal,
                k_anomaly,
                height,
                width,
                seed,
            } => {
                let scene = synth_image_scene(*k_normal, *k_anomaly, *height, *width, *seed)?;
                Dataset {
                    frames: scene.frames,
                    truth: Some(scene.truth),
                    boxes: Some(scene.boxes),
                }
            }
            Self::Csv { path, ground_truth } => {
                let frames = load_feature_csv(path)?;
                let truth = truth(ground_truth, frames.len())?;
                Dataset {
                    frames,
                    truth,
                    boxes: None,
                }
            }
            Self::Images {
                manifest,
                ground_truth,
            } => {
                let frames = load_image_frames(manifest)?;
                let truth = truth(ground_truth, frames.len())?;
                Dataset {
                    frames,
                    truth,
                    boxes: None,
                }
            }
        })
    }
}

/// One line of `log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iteration: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub round: Option<usize>,
    /// Seconds since the command that wrote the event started.
    pub wall_time: f64,
}

impl LogEvent {
    fn new(event: &str, started: Instant) -> Self {
        Self {
            event: event.to_string(),
            iteration: None,
            epoch: None,
            mean_loss: None,
            round: None,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }
}

/// What has been completed so far.
#[derive(Debug, Clone)]
pub struct Progress {
    pub initial: Option<ScoreVector>,
    pub iterations: Vec<IterationRecord>,
    pub ensemble: Option<ScoreVector>,
    pub rounds: Vec<SessionRound>,
}

impl Progress {
    pub fn is_complete(&self, cfg: &Config) -> bool {
        self.iterations.len() >= cfg.run.iterations && self.ensemble.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct SessionRound {
    pub round: usize,
    pub models: Vec<ScoringModel>,
    pub scores: ScoreVector,
    pub feedback: Feedback,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunDir {
    /// Uses `root` without touching the disk.
    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Creates (or reinitialises) the directory for a new run.
    pub fn create(root: impl Into<PathBuf>, config: &Config, dataset: &DatasetSpec) -> Result<Self> {
        let dir = Self::at(root);
        fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
        dir.clear_results()?;
        write_atomic(&dir.config_path(), config.to_kv().as_bytes())?;
        let json = serde_json::to_vec_pretty(dataset)?;
        write_atomic(&dir.dataset_path(), &json)?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.root.join("dataset.json")
    }

    pub fn ground_truth_path(&self) -> PathBuf {
        self.root.join("ground_truth.csv")
    }

    pub fn iter_dir(&self, i: usize) -> PathBuf {
        self.root.join(format!("iter_{i}"))
    }

    pub fn scores_path(&self, i: usize) -> PathBuf {
        self.iter_dir(i).join("scores.csv")
    }

    pub fn model_path(&self, i: usize) -> PathBuf {
        self.iter_dir(i).join("model.ckpt")
    }

    pub fn labels_path(&self, i: usize) -> PathBuf {
        self.root.join(format!("labels_{i}.csv"))
    }

    pub fn ensemble_path(&self) -> PathBuf {
        self.root.join("scores.csv")
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("log.jsonl")
    }

    pub fn session_dir(&self) -> PathBuf {
        self.root.join("session")
    }

    pub fn round_dir(&self, r: usize) -> PathBuf {
        self.session_dir().join(format!("round_{r}"))
    }

    pub fn feedback_path(&self) -> PathBuf {
        self.session_dir().join("feedback.jsonl")
    }

    /// Whether a run was ever configured here.
    pub fn is_initialised(&self) -> bool {
        self.config_path().is_file() && self.dataset_path().is_file()
    }

    pub fn load_config(&self) -> Result<Config> {
        Config::load(self.config_path())
    }

    pub fn load_dataset_spec(&self) -> Result<DatasetSpec> {
        let path = self.dataset_path();
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))
    }

    /// Removes every result so a new run starts clean. Config and dataset
    /// descriptions are left alone.
    pub fn clear_results(&self) -> Result<()> {
        let Ok(entries) = fs::read_dir(&self.root) else {
            return Ok(());
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let path = entry.path();
            let is_result = name.starts_with("iter_")
                || name.starts_with("labels_")
                || name == "session"
                || name == "scores.csv"
                || name == "log.jsonl"
                || name == "ground_truth.csv";
            if !is_result {
                continue;
            }
            let removed = if path.is_dir() {
                fs::remove_dir_all(&path)
            } else {
                fs::remove_file(&path)
            };
            removed.map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Drops the feedback session, keeping the self-training results.
    pub fn clear_session(&self) -> Result<()> {
        let dir = self.session_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }

    pub fn append_log(&self, event: &LogEvent) -> Result<()> {
        let path = self.log_path();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        f.write_all(&line).map_err(|e| Error::io(&path, e))
    }

    pub fn read_log(&self) -> Result<Vec<LogEvent>> {
        let path = self.log_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::format(&path, e.to_string())))
            .collect()
    }

    pub fn write_ground_truth(&self, gt: &GroundTruth) -> Result<()> {
        write_ground_truth(self.ground_truth_path(), gt)
    }

    pub fn load_ground_truth(&self) -> Result<Option<GroundTruth>> {
        let path = self.ground_truth_path();
        if !path.exists() {
            return Ok(None);
        }
        load_ground_truth(path).map(Some)
    }

    fn write_scores(&self, path: &Path, scores: &ScoreVector) -> Result<()> {
        write_atomic(path, scores.to_csv().as_bytes())
    }

    pub fn write_initial(&self, scores: &ScoreVector) -> Result<()> {
        self.write_scores(&self.scores_path(0), scores)
    }

    pub fn write_iteration(&self, record: &IterationRecord) -> Result<()> {
        let i = record.iteration;
        write_atomic(&self.labels_path(i), record.labels.to_csv().as_bytes())?;
        fs::create_dir_all(self.iter_dir(i)).map_err(|e| Error::io(self.iter_dir(i), e))?;
        save_checkpoint(self.model_path(i).with_extension("tmp"), &record.model)?;
        let ckpt = self.model_path(i);
        fs::rename(ckpt.with_extension("tmp"), &ckpt).map_err(|e| Error::io(&ckpt, e))?;
        // scores last: their presence marks the iteration as complete
        self.write_scores(&self.scores_path(i), &record.scores)
    }

    pub fn write_ensemble(&self, scores: &ScoreVector) -> Result<()> {
        self.write_scores(&self.ensemble_path(), scores)
    }

    /// Reads and checks everything already on disk for `fs`.
    pub fn load_progress(&self, fs_: &FrameSet, cfg: &Config) -> Result<Progress> {
        let k = fs_.len();
        let read_scores = |path: PathBuf, p: Provenance| -> Result<ScoreVector> {
            let s = ScoreVector::read_csv(&path, p)?;
            if s.len() != k {
                return Err(Error::format(
                    &path,
                    format!("{} scores for {k} frames", s.len()),
                ));
            }
            Ok(s)
        };
        let mut progress = Progress {
            initial: None,
            iterations: Vec::new(),
            ensemble: None,
            rounds: Vec::new(),
        };
        if !self.scores_path(0).exists() {
            return Ok(progress);
        }
        let initial = read_scores(self.scores_path(0), Provenance::Fused)?;
        let arch = cfg.run.architecture(fs_)?;
        let mut previous = initial.clone();
        for i in 1.. {
            if !self.scores_path(i).exists() {
                break;
            }
            let path = self.model_path(i);
            let model = load_checkpoint(&path)?;
            if model.arch() != &arch {
                return Err(Error::format(
                    &path,
                    format!("architecture {} does not match the config ({arch})", model.arch()),
                ));
            }
            let scores = read_scores(self.scores_path(i), Provenance::Learner)?;
            let labels = select_pseudo_labels(&previous, cfg.run.anomaly_fraction, cfg.run.normal_fraction)?;
            previous = scores.clone();
            progress.iterations.push(IterationRecord {
                iteration: i,
                labels,
                model,
                scores,
                epochs: Vec::new(),
            });
        }
        progress.initial = Some(initial);
        if self.ensemble_path().exists() {
            progress.ensemble = Some(read_scores(self.ensemble_path(), Provenance::Ensemble)?);
        }
        progress.rounds = self.load_rounds(k)?;
        Ok(progress)
    }

    fn load_rounds(&self, k: usize) -> Result<Vec<SessionRound>> {
        let path = self.feedback_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut rounds = Vec::new();
        for (n, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let feedback: Feedback =
                serde_json::from_str(line).map_err(|e| Error::format(&path, e.to_string()))?;
            let r = n + 1;
            let dir = self.round_dir(r);
            let models = if dir.join("model.ckpt").exists() {
                vec![load_checkpoint(dir.join("model.ckpt"))?]
            } else {
                let mut ms = Vec::new();
                for j in 1.. {
                    let p = dir.join(format!("model_{j}.ckpt"));
                    if !p.exists() {
                        break;
                    }
                    ms.push(load_checkpoint(p)?);
                }
                if ms.is_empty() {
                    return Err(Error::format(&dir, "round has no model checkpoint"));
                }
                ms
            };
            let spath = dir.join("scores.csv");
            let scores = ScoreVector::read_csv(&spath, Provenance::Ensemble)?;
            if scores.len() != k {
                return Err(Error::format(&spath, format!("{} scores for {k} frames", scores.len())));
            }
            rounds.push(SessionRound {
                round: r,
                models,
                scores,
                feedback,
            });
        }
        Ok(rounds)
    }

    /// Runs, or finishes, self-training and writes every artifact.
    pub fn execute(
        &self,
        fs_: &FrameSet,
        cfg: &Config,
        observer: &mut dyn FnMut(SelfTrainEvent<'_>),
    ) -> Result<SelfTrainingRun> {
        cfg.validate()?;
        let started = Instant::now();
        let progress = self.load_progress(fs_, cfg)?;
        let initial = match progress.initial {
            Some(s) => s,
            None => {
                let s = initial_scores(fs_, &cfg.run.detect, cfg.run.seed)?;
                self.write_initial(&s)?;
                self.append_log(&LogEvent::new("initial", started))?;
                s
            }
        };
        observer(SelfTrainEvent::Initial(&initial));
        let mut completed = progress.iterations;
        completed.truncate(cfg.run.iterations);
        let mut failure = None;
        let run = resume_self_training(fs_, &cfg.run, initial, completed, &mut |ev| {
            let logged = match &ev {
                SelfTrainEvent::Epoch { iteration, stats } => {
                    let mut e = LogEvent::new("epoch", started);
                    e.iteration = Some(*iteration);
                    e.epoch = Some(stats.epoch);
                    e.mean_loss = Some(stats.mean_loss);
                    self.append_log(&e)
                }
                SelfTrainEvent::Iteration(record) => self.write_iteration(record).and_then(|_| {
                    let mut e = LogEvent::new("iteration", started);
                    e.iteration = Some(record.iteration);
                    e.mean_loss = record.epochs.last().map(|s| s.mean_loss);
                    self.append_log(&e)
                }),
                SelfTrainEvent::Initial(_) => Ok(()),
            };
            if let Err(e) = logged {
                failure.get_or_insert(e);
            }
            observer(ev);
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let ensemble = ensemble_score(&run.ensemble(), fs_)?;
        self.write_ensemble(&ensemble)?;
        self.append_log(&LogEvent::new("ensemble", started))?;
        Ok(run)
    }

    /// Re-opens the feedback session recorded on disk, or starts round 0.
    pub fn open_session(&self, fs_: &FrameSet, cfg: &Config, run: &SelfTrainingRun) -> Result<Session> {
        let mut session = start_session(run.ensemble(), fs_, cfg.hitl.clone())?;
        let rounds = self.load_rounds(fs_.len())?;
        if let Some(last) = rounds.last() {
            let log = rounds.iter().map(|r| r.feedback.clone()).collect();
            session
                .restore(last.models.clone(), last.scores.clone(), log)
                .map_err(|e| Error::format(self.round_dir(last.round), e.to_string()))?;
        }
        Ok(session)
    }

    /// Applies one round of feedback and persists it.
    pub fn apply_round(&self, session: Session, fs_: &FrameSet, fb: Feedback) -> Result<Session> {
        let started = Instant::now();
        let fb_line = serde_json::to_string(&fb)?;
        let next = apply_feedback_observed(session, fs_, fb, &mut |stats| {
            let mut e = LogEvent::new("fine-tune", started);
            e.epoch = Some(stats.epoch);
            e.mean_loss = Some(stats.mean_loss);
            let _ = self.append_log(&e);
        })?;
        let r = next.round();
        let dir = self.round_dir(r);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        match next.working_models() {
            [only] => save_checkpoint(dir.join("model.ckpt"), only)?,
            many => {
                for (j, m) in many.iter().enumerate() {
                    save_checkpoint(dir.join(format!("model_{}.ckpt", j + 1)), m)?;
                }
            }
        }
        self.write_scores(&dir.join("scores.csv"), next.scores())?;
        let path = self.feedback_path();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{fb_line}").map_err(|e| Error::io(&path, e))?;
        let mut e = LogEvent::new("feedback", started);
        e.round = Some(r);
        self.append_log(&e)?;
        Ok(next)
    }

    /// Rebuilds the completed run from disk without training.
    pub fn load_run(&self, fs_: &FrameSet, cfg: &Config) -> Result<Option<SelfTrainingRun>> {
        let p = self.load_progress(fs_, cfg)?;
        match (p.initial, p.ensemble) {
            (Some(initial), Some(_)) if !p.iterations.is_empty() => Ok(Some(SelfTrainingRun {
                initial,
                iterations: p.iterations,
            })),
            _ => Ok(None),
        }
    }
}
