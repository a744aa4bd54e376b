//! Expert feedback rounds on top of a finished self-training run.
//!
//! A session shows the top `l` frames of the current ranking, takes up to
//! `k` anomaly tags and `k` normal tags from that list, widens each tag to
//! its temporal neighbours, fine-tunes working copies of the ensemble
//! members (all of them, or only the last) and re-ranks every frame with
//! the copies. The original ensemble stays untouched so a session can be
//! reset. Ground truth only enters through [`simulate_expert`].

use serde::{Deserialize, Serialize};

use crate::dataset::{FrameSet, GroundTruth};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::learner::{train_uniform, EpochStats, ScoringModel, TrainConfig};
use crate::scores::ScoreVector;
use crate::seed::{self, Stage};
use crate::selftrain::{ensemble_score, EnsembleModel};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_NEIGHBOR_RADIUS: usize = 5;
pub const DEFAULT_FINE_TUNE_EPOCHS: usize = 100;

/// Expert tags for one round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub anomalies: Vec<usize>,
    pub normals: Vec<usize>,
}

impl Feedback {
    pub fn is_empty(&self) -> bool {
        self.anomalies.is_empty() && self.normals.is_empty()
    }
}

/// Which models a feedback round fine-tunes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FineTuneTarget {
    /// A copy of the last ensemble member, which alone ranks afterwards.
    Last,
    /// A copy of every member; the ranking stays the members' mean.
    Ensemble,
}

impl std::fmt::Display for FineTuneTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Last => "last",
            Self::Ensemble => "ensemble",
        })
    }
}

impl std::str::FromStr for FineTuneTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Self::Last),
            "ensemble" => Ok(Self::Ensemble),
            other => Err(Error::InvalidArgument(format!(
                "unknown fine-tune target {other:?} (expected last or ensemble)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitlConfig {
    /// How many top frames are shown; `None` means `floor(0.1 K)`.
    pub presented: Option<usize>,
    /// Cap on tags per class per round.
    pub k: usize,
    pub neighbor_radius: usize,
    pub epochs: usize,
    /// Mix the pseudo-labelled frames back into each fine-tune set.
    pub replay: bool,
    /// Fine-tune on every round's tags so far, not just the latest.
    pub accumulate: bool,
    /// Start every round from the self-trained members and fine-tune on all
    /// tags so far, so the session depends only on the set of tags.
    pub anchor: bool,
    /// Leave frames tagged in earlier rounds out of the presented list.
    pub hide_tagged: bool,
    pub target: FineTuneTarget,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for HitlConfig {
    fn default() -> Self {
        Self {
            presented: None,
            k: DEFAULT_K,
            neighbor_radius: DEFAULT_NEIGHBOR_RADIUS,
            epochs: DEFAULT_FINE_TUNE_EPOCHS,
            replay: false,
            accumulate: true,
            anchor: false,
            hide_tagged: true,
            target: FineTuneTarget::Ensemble,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

/// Frames and labels used for one fine-tune, each frame once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FineTuneSet {
    pub anomalies: Vec<usize>,
    pub normals: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Session {
    ensemble: EnsembleModel,
    working: Vec<ScoringModel>,
    scores: ScoreVector,
    ranking: Vec<usize>,
    presented: usize,
    shown: Vec<usize>,
    round: usize,
    log: Vec<Feedback>,
    replay: Option<FineTuneSet>,
    config: HitlConfig,
}

impl Session {
    pub fn ensemble(&self) -> &EnsembleModel {
        &self.ensemble
    }

    /// Models whose mean score is the ranking after round 0.
    pub fn working_models(&self) -> &[ScoringModel] {
        &self.working
    }

    /// The working copy of the last ensemble member.
    pub fn working_model(&self) -> &ScoringModel {
        self.working.last().expect("nonempty working set")
    }

    pub fn scores(&self) -> &ScoreVector {
        &self.scores
    }

    /// All frame ids, highest score first.
    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }

    /// The top-`l` frames the expert may tag.
    pub fn presented(&self) -> &[usize] {
        &self.shown
    }

    fn refresh(&mut self) {
        self.ranking = self.scores.ranking();
        let tagged: std::collections::HashSet<usize> = if self.config.hide_tagged {
            self.log
                .iter()
                .flat_map(|fb| fb.anomalies.iter().chain(&fb.normals))
                .copied()
                .collect()
        } else {
            Default::default()
        };
        self.shown = self
            .ranking
            .iter()
            .filter(|i| !tagged.contains(i))
            .take(self.presented)
            .copied()
            .collect();
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn feedback_log(&self) -> &[Feedback] {
        &self.log
    }

    pub fn config(&self) -> &HitlConfig {
        &self.config
    }

    /// Pseudo labels to mix into fine-tuning when `replay` is on.
    pub fn set_replay(&mut self, set: FineTuneSet) {
        self.replay = Some(set);
    }

    /// Restores a later round from persisted state.
    pub fn restore(&mut self, working: Vec<ScoringModel>, scores: ScoreVector, log: Vec<Feedback>) -> Result<()> {
        if scores.len() != self.scores.len() {
            return Err(Error::LengthMismatch {
                left: scores.len(),
                right: self.scores.len(),
            });
        }
        if working.len() != self.working.len() {
            return Err(Error::Checkpoint(format!(
                "{} session models for a working set of {}",
                working.len(),
                self.working.len()
            )));
        }
        if let Some(m) = working.iter().find(|m| m.arch() != self.ensemble.arch()) {
            return Err(Error::Checkpoint(format!(
                "session model {} does not match ensemble {}",
                m.arch(),
                self.ensemble.arch()
            )));
        }
        self.scores = scores;
        self.working = working;
        self.round = log.len();
        self.log = log;
        self.refresh();
        Ok(())
    }

    /// Checks tags against the presented list and the per-class cap.
    pub fn validate(&self, fb: &Feedback) -> Result<()> {
        let shown = self.presented();
        for (name, ids) in [("anomaly", &fb.anomalies), ("normal", &fb.normals)] {
            if ids.len() > self.config.k {
                return Err(Error::InvalidFeedback(format!(
                    "{} {name} tags exceed the cap of {}",
                    ids.len(),
                    self.config.k
                )));
            }
            if let Some(id) = ids.iter().find(|id| !shown.contains(id)) {
                return Err(Error::InvalidFeedback(format!(
                    "frame {id} was not among the {} presented frames",
                    shown.len()
                )));
            }
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidFeedback(format!("frame {} tagged twice as {name}", w[0])));
            }
        }
        if let Some(id) = fb.anomalies.iter().find(|id| fb.normals.contains(id)) {
            return Err(Error::InvalidFeedback(format!(
                "frame {id} tagged both anomalous and normal"
            )));
        }
        Ok(())
    }
}

fn default_presented(k: usize) -> usize {
    k / 10
}

fn base_models(em: &EnsembleModel, target: FineTuneTarget) -> Vec<ScoringModel> {
    match target {
        FineTuneTarget::Last => vec![em.last().clone()],
        FineTuneTarget::Ensemble => em.models().to_vec(),
    }
}

/// Opens round 0 from the ensemble's ranking.
pub fn start_session(em: EnsembleModel, fs: &FrameSet, config: HitlConfig) -> Result<Session> {
    let presented = config.presented.unwrap_or_else(|| default_presented(fs.len()));
    if presented < 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least one presented frame (K = {})",
            fs.len()
        )));
    }
    if presented > fs.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot present {presented} of {} frames",
            fs.len()
        )));
    }
    config.train.validate()?;
    let scores = ensemble_score(&em, fs)?;
    let working = base_models(&em, config.target);
    let mut session = Session {
        ranking: Vec::new(),
        scores,
        working,
        ensemble: em,
        presented,
        shown: Vec::new(),
        round: 0,
        log: Vec::new(),
        replay: None,
        config,
    };
    session.refresh();
    Ok(session)
}

/// Tagged frames plus neighbours within `radius`, clipped to `[0, k)`.
///
/// A frame tagged explicitly keeps its tag. A frame reached only as a
/// neighbour is anomalous if any anomaly tag reaches it, normal otherwise.
pub fn expand_feedback(fb: &Feedback, k: usize, radius: usize) -> FineTuneSet {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        None,
        NeighborNormal,
        NeighborAnomaly,
        Normal,
        Anomaly,
    }
    let mut marks = vec![Mark::None; k];
    let window = |id: usize| id.saturating_sub(radius)..(id + radius + 1).min(k);
    for &id in &fb.normals {
        for j in window(id) {
            if marks[j] == Mark::None {
                marks[j] = Mark::NeighborNormal;
            }
        }
    }
    for &id in &fb.anomalies {
        for j in window(id) {
            if matches!(marks[j], Mark::None | Mark::NeighborNormal) {
                marks[j] = Mark::NeighborAnomaly;
            }
        }
    }
    for &id in &fb.normals {
        marks[id] = Mark::Normal;
    }
    for &id in &fb.anomalies {
        marks[id] = Mark::Anomaly;
    }
    let pick = |want: &[Mark]| {
        marks
            .iter()
            .enumerate()
            .filter(|(_, m)| want.contains(m))
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
    };
    FineTuneSet {
        anomalies: pick(&[Mark::Anomaly, Mark::NeighborAnomaly]),
        normals: pick(&[Mark::Normal, Mark::NeighborNormal]),
    }
}

/// One feedback round: expand, fine-tune, re-rank.
pub fn apply_feedback(session: Session, fs: &FrameSet, fb: Feedback) -> Result<Session> {
    apply_feedback_observed(session, fs, fb, &mut |_| {})
}

pub fn apply_feedback_observed(
    mut session: Session,
    fs: &FrameSet,
    fb: Feedback,
    observer: &mut dyn FnMut(EpochStats),
) -> Result<Session> {
    if fs.len() != session.scores.len() {
        return Err(Error::LengthMismatch {
            left: fs.len(),
            right: session.scores.len(),
        });
    }
    session.validate(&fb)?;
    let round = session.round + 1;
    if !fb.is_empty() {
        let tags = if session.config.accumulate || session.config.anchor {
            accumulated(&session.log, &fb)
        } else {
            fb.clone()
        };
        let mut set = expand_feedback(&tags, fs.len(), session.config.neighbor_radius);
        if let (true, Some(replay)) = (session.config.replay, &session.replay) {
            merge_replay(&mut set, replay);
        }
        let cfg = &session.config;
        let start = if cfg.anchor {
            base_models(&session.ensemble, cfg.target)
        } else {
            std::mem::take(&mut session.working)
        };
        let mut tuned = Vec::with_capacity(start.len());
        for (j, model) in start.into_iter().enumerate() {
            let index = if cfg.anchor { j } else { round * 1000 + j };
            let seed = seed::derive(cfg.seed, Stage::FineTune, index as u64);
            tuned.push(train_uniform(
                model,
                fs,
                &set.anomalies,
                &set.normals,
                &cfg.train,
                cfg.epochs,
                seed,
                observer,
            )?);
        }
        session.scores = ensemble_score(&EnsembleModel::new(tuned.clone())?, fs)?;
        session.working = tuned;
    }
    session.round = round;
    session.log.push(fb);
    session.refresh();
    Ok(session)
}

/// Union of all tags, a frame keeping the label from its latest round.
fn accumulated(log: &[Feedback], latest: &Feedback) -> Feedback {
    let mut label = std::collections::BTreeMap::new();
    for fb in log.iter().chain(std::iter::once(latest)) {
        label.extend(fb.anomalies.iter().map(|&i| (i, true)));
        label.extend(fb.normals.iter().map(|&i| (i, false)));
    }
    Feedback {
        anomalies: label.iter().filter(|(_, a)| **a).map(|(i, _)| *i).collect(),
        normals: label.iter().filter(|(_, a)| !**a).map(|(i, _)| *i).collect(),
    }
}

fn merge_replay(set: &mut FineTuneSet, replay: &FineTuneSet) {
    let taken: std::collections::HashSet<usize> =
        set.anomalies.iter().chain(&set.normals).copied().collect();
    set.anomalies
        .extend(replay.anomalies.iter().filter(|i| !taken.contains(i)));
    set.normals
        .extend(replay.normals.iter().filter(|i| !taken.contains(i)));
}

/// What the simulated expert would tag on the current presented list.
pub fn expert_feedback(session: &Session, gt: &GroundTruth, k: usize) -> Feedback {
    let mut fb = Feedback::default();
    for &id in session.presented() {
        let bucket = if gt.is_anomaly(id) {
            &mut fb.anomalies
        } else {
            &mut fb.normals
        };
        if bucket.len() < k {
            bucket.push(id);
        }
    }
    fb
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub session: Session,
    /// AUC at round 0 and after each round.
    pub trajectory: Vec<f64>,
    /// Rounds where fewer than `k` frames of some class were on show.
    pub short_rounds: Vec<usize>,
}

/// Runs `rounds` feedback rounds driven by the ground truth.
pub fn simulate_expert(
    mut session: Session,
    fs: &FrameSet,
    gt: &GroundTruth,
    k: usize,
    rounds: usize,
) -> Result<Simulation> {
    if gt.len() != fs.len() {
        return Err(Error::LengthMismatch {
            left: gt.len(),
            right: fs.len(),
        });
    }
    if k > session.presented {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} presented frames",
            session.presented
        )));
    }
    let mut trajectory = vec![auc(&session.scores, gt)?.auc];
    let mut short_rounds = Vec::new();
    for _ in 0..rounds {
        let fb = expert_feedback(&session, gt, k);
        if fb.anomalies.len() < k || fb.normals.len() < k {
            short_rounds.push(session.round + 1);
        }
        session = apply_feedback(session, fs, fb)?;
        trajectory.push(auc(&session.scores, gt)?.auc);
    }
    Ok(Simulation {
        session,
        trajectory,
        short_rounds,
    })
}
