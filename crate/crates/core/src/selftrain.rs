//! Self-training: pseudo-label selection, the retrain-and-relabel loop and
//! the sequential ensemble.
//!
//! Ground truth never enters this module; every relabeling step sees only
//! the previous iteration's scores.

use crate::dataset::FrameSet;
use crate::error::{Error, Result};
use crate::initdetect::{initial_scores, DetectConfig};
use crate::learner::{net_init, train_observed, ArchKind, Architecture, EpochStats, ScoringModel, TrainConfig};
use crate::scores::{Provenance, ScoreVector};
use crate::seed::{self, Stage};

pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_ANOMALY_FRACTION: f64 = 0.10;
pub const DEFAULT_NORMAL_FRACTION: f64 = 0.20;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    anomalies: Vec<usize>,
    normals: Vec<usize>,
    selection_scores: ScoreVector,
}

impl PseudoLabelSet {
    /// Top-scored frames, highest first.
    pub fn anomalies(&self) -> &[usize] {
        &self.anomalies
    }

    /// Bottom-scored frames, lowest first.
    pub fn normals(&self) -> &[usize] {
        &self.normals
    }

    pub fn selection_scores(&self) -> &ScoreVector {
        &self.selection_scores
    }

    /// Selection scores of the anomaly candidates, aligned with
    /// [`anomalies`](Self::anomalies).
    pub fn anomaly_scores(&self) -> Vec<f64> {
        let s = self.selection_scores.values();
        self.anomalies.iter().map(|&i| s[i]).collect()
    }

    /// `frame_id,label` lines (1 = pseudo-anomaly, 0 = pseudo-normal).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_id,label\n");
        for &i in &self.anomalies {
            out.push_str(&format!("{i},1\n"));
        }
        for &i in &self.normals {
            out.push_str(&format!("{i},0\n"));
        }
        out
    }
}

fn cutoff(fraction: f64, k: usize) -> usize {
    // guard against 0.1 * 1000 = 100.00000000000001 style rounding
    (fraction * k as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Top `ceil(a_frac K)` frames become pseudo-anomalies and the bottom
/// `ceil(n_frac K)` pseudo-normals, ordering by descending score with ties
/// broken by ascending frame id.
pub fn select_pseudo_labels(scores: &ScoreVector, a_frac: f64, n_frac: f64) -> Result<PseudoLabelSet> {
    let k = scores.len();
    let valid = |f: f64| f > 0.0 && f < 1.0;
    if !valid(a_frac) || !valid(n_frac) {
        return Err(Error::InvalidArgument(format!(
            "fractions must lie in (0, 1), got {a_frac} and {n_frac}"
        )));
    }
    let (na, nn) = (cutoff(a_frac, k), cutoff(n_frac, k));
    if na == 0 || nn == 0 {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    if na + nn > k {
        return Err(Error::LabelOverlap {
            anomalies: na,
            normals: nn,
            frames: k,
        });
    }
    let order = scores.ranking();
    Ok(PseudoLabelSet {
        anomalies: order[..na].to_vec(),
        normals: order[k - nn..].iter().rev().copied().collect(),
        selection_scores: scores.clone(),
    })
}

/// Sequentially trained models; the score is their mean output.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    models: Vec<ScoringModel>,
}

impl EnsembleModel {
    pub fn new(models: Vec<ScoringModel>) -> Result<Self> {
        let first = models.first().ok_or(Error::EmptyEnsemble)?;
        if let Some(m) = models.iter().find(|m| m.arch() != first.arch()) {
            return Err(Error::InvalidArgument(format!(
                "ensemble members disagree on architecture: {} vs {}",
                first.arch(),
                m.arch()
            )));
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[ScoringModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn last(&self) -> &ScoringModel {
        self.models.last().expect("nonempty ensemble")
    }

    pub fn arch(&self) -> &Architecture {
        self.models[0].arch()
    }
}

/// Mean of the members' outputs, frame by frame.
pub fn ensemble_score(em: &EnsembleModel, fs: &FrameSet) -> Result<ScoreVector> {
    let mut total = vec![0.0; fs.len()];
    for m in &em.models {
        for (t, s) in total.iter_mut().zip(m.score_frames(fs)?.values()) {
            *t += s;
        }
    }
    let t = em.models.len() as f64;
    ScoreVector::new(total.into_iter().map(|v| v / t).collect(), Provenance::Ensemble)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub iterations: usize,
    pub anomaly_fraction: f64,
    pub normal_fraction: f64,
    pub train: TrainConfig,
    pub detect: DetectConfig,
    /// `None` chooses mlp for vectors and conv-gap for images.
    pub arch: Option<ArchKind>,
    /// Start each iteration from the previous model instead of a fresh draw.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            anomaly_fraction: DEFAULT_ANOMALY_FRACTION,
            normal_fraction: DEFAULT_NORMAL_FRACTION,
            train: TrainConfig::default(),
            detect: DetectConfig::default(),
            arch: None,
            warm_start: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("at least one iteration is required".into()));
        }
        if self.anomaly_fraction + self.normal_fraction > 1.0 {
            return Err(Error::InvalidArgument(
                "anomaly and normal fractions sum to more than 1".into(),
            ));
        }
        self.train.validate()
    }

    pub fn architecture(&self, fs: &FrameSet) -> Result<Architecture> {
        match self.arch {
            Some(kind) => Architecture::standard(kind, fs.shape()),
            None => Ok(Architecture::default_for(fs.shape())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub labels: PseudoLabelSet,
    pub model: ScoringModel,
    pub scores: ScoreVector,
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct SelfTrainingRun {
    pub initial: ScoreVector,
    pub iterations: Vec<IterationRecord>,
}

impl SelfTrainingRun {
    pub fn ensemble(&self) -> EnsembleModel {
        EnsembleModel::new(self.iterations.iter().map(|r| r.model.clone()).collect())
            .expect("at least one iteration")
    }

    /// Ensemble scores using only the first `t` members, for t = 1..=len.
    /// Each is the running mean of the iteration scores.
    pub fn prefix_ensembles(&self) -> Vec<ScoreVector> {
        let mut total = vec![0.0; self.initial.len()];
        let mut out = Vec::with_capacity(self.iterations.len());
        for (t, r) in self.iterations.iter().enumerate() {
            for (a, s) in total.iter_mut().zip(r.scores.values()) {
                *a += s;
            }
            let n = (t + 1) as f64;
            out.push(
                ScoreVector::new(total.iter().map(|v| v / n).collect(), Provenance::Ensemble)
                    .expect("finite scores"),
            );
        }
        out
    }

    /// Initial scores followed by each iteration's scores (t + 1 vectors).
    pub fn score_vectors(&self) -> Vec<&ScoreVector> {
        std::iter::once(&self.initial)
            .chain(self.iterations.iter().map(|r| &r.scores))
            .collect()
    }
}

/// Progress notifications from [`run_self_training_observed`].
#[derive(Debug)]
pub enum SelfTrainEvent<'a> {
    Initial(&'a ScoreVector),
    Epoch { iteration: usize, stats: EpochStats },
    Iteration(&'a IterationRecord),
}

pub fn run_self_training(fs: &FrameSet, cfg: &RunConfig) -> Result<SelfTrainingRun> {
    run_self_training_observed(fs, cfg, &mut |_| {})
}

pub fn run_self_training_observed(
    fs: &FrameSet,
    cfg: &RunConfig,
    observer: &mut dyn FnMut(SelfTrainEvent<'_>),
) -> Result<SelfTrainingRun> {
    cfg.validate()?;
    let initial = initial_scores(fs, &cfg.detect, cfg.seed)?;
    observer(SelfTrainEvent::Initial(&initial));
    resume_self_training(fs, cfg, initial, Vec::new(), observer)
}

/// Continues a run whose first `completed.len()` iterations are already
/// known. Seeds depend only on the iteration index, so a resumed run matches
/// an uninterrupted one.
pub fn resume_self_training(
    fs: &FrameSet,
    cfg: &RunConfig,
    initial: ScoreVector,
    completed: Vec<IterationRecord>,
    observer: &mut dyn FnMut(SelfTrainEvent<'_>),
) -> Result<SelfTrainingRun> {
    cfg.validate()?;
    if initial.len() != fs.len() {
        return Err(Error::LengthMismatch {
            left: initial.len(),
            right: fs.len(),
        });
    }
    let arch = cfg.architecture(fs)?;
    let mut run = SelfTrainingRun {
        initial,
        iterations: completed,
    };
    for i in run.iterations.len() + 1..=cfg.iterations {
        let previous = run.iterations.last().map_or(&run.initial, |r| &r.scores);
        let labels = select_pseudo_labels(previous, cfg.anomaly_fraction, cfg.normal_fraction)?;
        let start = match (cfg.warm_start, run.iterations.last()) {
            (true, Some(prev)) => prev.model.clone(),
            _ => net_init(&arch, seed::derive(cfg.seed, Stage::Init, i as u64)),
        };
        let mut epochs = Vec::with_capacity(cfg.train.epochs);
        let model = train_observed(
            start,
            fs,
            labels.anomalies(),
            labels.normals(),
            &labels.anomaly_scores(),
            &cfg.train,
            seed::derive(cfg.seed, Stage::Train, i as u64),
            &mut |stats| {
                epochs.push(stats);
                observer(SelfTrainEvent::Epoch { iteration: i, stats });
            },
        )?;
        let scores = model.score_frames(fs)?;
        let record = IterationRecord {
            iteration: i,
            labels,
            model,
            scores,
            epochs,
        };
        observer(SelfTrainEvent::Iteration(&record));
        run.iterations.push(record);
    }
    Ok(run)
}
