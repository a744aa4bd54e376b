//! Shared run state behind the HTTP handlers.
//!
//! All mutations go through a single job slot. Long work (self-training,
//! fine-tuning) runs on the blocking pool and publishes its phase here;
//! handlers only read.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;
use vadrank_core::config::Config;
use vadrank_core::hitl::{Feedback, Session};
use vadrank_core::rundir::{Dataset, DatasetSpec, RunDir};
use vadrank_core::selftrain::{ensemble_score, SelfTrainEvent, SelfTrainingRun};
use vadrank_core::ScoreVector;

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "phase", rename_all = "kebab-case")]
pub enum Phase {
    Idle,
    InitialDetection,
    Training { iteration: usize, epoch: usize },
    Ready,
    FineTuning { round: usize },
    Error { message: String },
}

impl Phase {
    fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::InitialDetection => "initial-detection",
            Phase::Training { .. } => "training",
            Phase::Ready => "ready",
            Phase::FineTuning { .. } => "fine-tuning",
            Phase::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Status {
    pub job_id: u64,
    #[serde(flatten)]
    pub phase: Phase,
    pub progress: f64,
    pub busy: bool,
    pub round: Option<usize>,
    pub frames: Option<usize>,
}

/// A finished self-training run with its feedback session.
pub struct Loaded {
    pub config: Config,
    pub data: Arc<Dataset>,
    pub run: Arc<SelfTrainingRun>,
    pub session: Session,
    /// Scores at round 0 and after every applied round.
    pub history: Vec<ScoreVector>,
}

struct Inner {
    phase: Phase,
    progress: f64,
    job_id: u64,
    busy: Option<Phase>,
    loaded: Option<Loaded>,
    /// Set when the directory holds an unfinished run to pick up.
    pending: Option<(Config, Arc<Dataset>)>,
}

#[derive(Clone)]
pub struct AppState {
    dir: Arc<RunDir>,
    inner: Arc<Mutex<Inner>>,
    jobs: Arc<AtomicU64>,
}

/// Holds the job slot; releasing it happens on drop.
pub struct JobGuard {
    state: AppState,
    pub job_id: u64,
}

impl Drop for JobGuard {
    fn drop(&mut self) {
        self.state.lock().busy = None;
    }
}

fn history_from(
    dir: &RunDir,
    config: &Config,
    session: &Session,
    data: &Dataset,
    ensemble: ScoreVector,
) -> Vec<ScoreVector> {
    let k = data.frames.len();
    let mut history = vec![ensemble];
    let rounds = dir
        .load_progress(&data.frames, config)
        .map(|p| p.rounds)
        .unwrap_or_default();
    history.extend(rounds.into_iter().take(session.round()).map(|r| r.scores));
    history.retain(|s| s.len() == k);
    history
}

impl AppState {
    /// Opens `root`, validating anything already persisted there. A corrupt
    /// artifact is an error naming the file.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, vadrank_core::Error> {
        let dir = RunDir::at(root.as_ref());
        let mut inner = Inner {
            phase: Phase::Idle,
            progress: 0.0,
            job_id: 0,
            busy: None,
            loaded: None,
            pending: None,
        };
        if dir.is_initialised() {
            let config = dir.load_config()?;
            let spec = dir.load_dataset_spec()?;
            let mut data = spec.load()?;
            if data.truth.is_none() {
                data.truth = dir.load_ground_truth()?;
            }
            let data = Arc::new(data);
            let progress = dir.load_progress(&data.frames, &config)?;
            if progress.is_complete(&config) {
                let run = dir
                    .load_run(&data.frames, &config)?
                    .expect("complete progress has a run");
                let session = dir.open_session(&data.frames, &config, &run)?;
                let ensemble = ensemble_score(&run.ensemble(), &data.frames)?;
                let history = history_from(&dir, &config, &session, &data, ensemble);
                inner.loaded = Some(Loaded {
                    config,
                    data,
                    run: Arc::new(run),
                    session,
                    history,
                });
                inner.phase = Phase::Ready;
                inner.progress = 1.0;
            } else if progress.initial.is_some() {
                inner.pending = Some((config, data));
            }
        }
        Ok(Self {
            dir: Arc::new(dir),
            inner: Arc::new(Mutex::new(inner)),
            jobs: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.dir
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn status(&self) -> Status {
        let g = self.lock();
        Status {
            job_id: g.job_id,
            phase: g.phase.clone(),
            progress: g.progress,
            busy: g.busy.is_some(),
            round: g.loaded.as_ref().map(|l| l.session.round()),
            frames: g.loaded.as_ref().map(|l| l.data.frames.len()),
        }
    }

    /// Claims the job slot or reports which job holds it.
    pub fn try_begin(&self, phase: Phase) -> Result<JobGuard, ApiError> {
        let mut g = self.lock();
        if let Some(active) = &g.busy {
            return Err(ApiError::Busy(active.name().to_string()));
        }
        let job_id = self.jobs.fetch_add(1, Ordering::SeqCst) + 1;
        g.busy = Some(phase.clone());
        g.job_id = job_id;
        g.phase = phase;
        g.progress = 0.0;
        Ok(JobGuard {
            state: self.clone(),
            job_id,
        })
    }

    fn set_phase(&self, phase: Phase, progress: f64) {
        let mut g = self.lock();
        if g.busy.is_some() {
            g.busy = Some(phase.clone());
        }
        g.phase = phase;
        g.progress = progress;
    }

    /// Read access to the finished run.
    pub fn with_loaded<T>(&self, f: impl FnOnce(&Loaded) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let g = self.lock();
        match &g.loaded {
            Some(l) => f(l),
            None => Err(ApiError::Unavailable(format!(
                "no finished run (phase {})",
                g.phase.name()
            ))),
        }
    }

    /// Starts a fresh run in the background.
    pub fn start_run(&self, spec: DatasetSpec, config: Config) -> Result<u64, ApiError> {
        config.validate()?;
        let guard = self.try_begin(Phase::InitialDetection)?;
        let job_id = guard.job_id;
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let result = (|| -> Result<(), ApiError> {
                let data = spec.load()?;
                state.lock().loaded = None;
                state.lock().pending = None;
                let dir = RunDir::create(state.dir.root(), &config, &spec)?;
                if let Some(gt) = &data.truth {
                    dir.write_ground_truth(gt)?;
                }
                state.train(config, Arc::new(data))
            })();
            state.finish(result);
            drop(guard);
        });
        Ok(job_id)
    }

    /// Finishes an interrupted run found at startup, if any.
    pub fn resume_pending(&self) -> Result<Option<u64>, ApiError> {
        let Some((config, data)) = self.lock().pending.take() else {
            return Ok(None);
        };
        let guard = self.try_begin(Phase::InitialDetection)?;
        let job_id = guard.job_id;
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let result = state.train(config, data);
            state.finish(result);
            drop(guard);
        });
        Ok(Some(job_id))
    }

    fn train(&self, config: Config, data: Arc<Dataset>) -> Result<(), ApiError> {
        let total = (config.run.iterations * config.run.train.epochs).max(1) as f64;
        let epochs = config.run.train.epochs;
        let run = self.dir.execute(&data.frames, &config, &mut |ev| {
            if let SelfTrainEvent::Epoch { iteration, stats } = ev {
                let done = ((iteration - 1) * epochs + stats.epoch + 1) as f64;
                self.set_phase(
                    Phase::Training {
                        iteration,
                        epoch: stats.epoch + 1,
                    },
                    done / total,
                );
            }
        })?;
        self.dir.clear_session()?;
        let session = self.dir.open_session(&data.frames, &config, &run)?;
        let history = vec![session.scores().clone()];
        self.lock().loaded = Some(Loaded {
            config,
            data,
            run: Arc::new(run),
            session,
            history,
        });
        Ok(())
    }

    fn finish(&self, result: Result<(), ApiError>) {
        match result {
            Ok(()) => self.set_phase(Phase::Ready, 1.0),
            Err(e) => self.set_phase(
                Phase::Error {
                    message: e.to_string(),
                },
                0.0,
            ),
        }
    }

    /// Validates feedback now and fine-tunes in the background.
    pub fn start_feedback(&self, fb: Feedback) -> Result<(u64, usize), ApiError> {
        let guard = self.try_begin(Phase::FineTuning { round: 0 })?;
        let (session, data) = {
            let g = self.lock();
            let l = g
                .loaded
                .as_ref()
                .ok_or_else(|| ApiError::Unavailable("no finished run to give feedback on".into()))?;
            l.session.validate(&fb)?;
            (l.session.clone(), l.data.clone())
        };
        let round = session.round() + 1;
        self.set_phase(Phase::FineTuning { round }, 0.0);
        let job_id = guard.job_id;
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let result = state
                .dir
                .apply_round(session, &data.frames, fb)
                .map_err(ApiError::from)
                .map(|next| {
                    let mut g = state.lock();
                    if let Some(l) = g.loaded.as_mut() {
                        l.history.push(next.scores().clone());
                        l.session = next;
                    }
                });
            state.finish(result);
            drop(guard);
        });
        Ok((job_id, round))
    }

    /// Drops all feedback rounds and returns to the ensemble ranking.
    pub fn reset(&self) -> Result<(), ApiError> {
        let _guard = self.try_begin(Phase::Ready)?;
        let mut g = self.lock();
        let Some(l) = g.loaded.as_mut() else {
            g.phase = Phase::Idle;
            return Ok(());
        };
        self.dir.clear_session()?;
        l.session = self.dir.open_session(&l.data.frames, &l.config, &l.run)?;
        l.history.truncate(1);
        g.progress = 1.0;
        Ok(())
    }
}
