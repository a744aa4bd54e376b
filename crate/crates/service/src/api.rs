use std::collections::HashSet;

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vadrank_core::config::Config;
use vadrank_core::dataset::{encode_pgm, FrameShape, GrayImage};
use vadrank_core::eval::auc;
use vadrank_core::hitl::Feedback;
use vadrank_core::localize::{cam_mean, upsample};
use vadrank_core::rundir::DatasetSpec;

use crate::error::ApiError;
use crate::state::{AppState, Status};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/run", post(run))
        .route("/status", get(status))
        .route("/ranking", get(ranking))
        .route("/frame/{id}", get(frame))
        .route("/frame/{id}/saliency", get(saliency))
        .route("/feedback", post(feedback))
        .route("/history", get(history))
        .route("/reset", post(reset))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
pub struct RunRequest {
    pub dataset: DatasetSpec,
    /// Flat overrides on top of the defaults, e.g. `{"epochs": "500"}`.
    #[serde(default)]
    pub config: serde_json::Map<String, Value>,
}

fn config_from(map: &serde_json::Map<String, Value>) -> Result<Config, ApiError> {
    let mut cfg = Config::default();
    for (k, v) in map {
        let text = match v {
            Value::String(s) => s.clone(),
            Value::Number(_) | Value::Bool(_) => v.to_string(),
            _ => return Err(ApiError::BadRequest(format!("config value for {k} must be a scalar"))),
        };
        cfg.set(k, &text)?;
    }
    Ok(cfg)
}

async fn run(State(state): State<AppState>, Json(req): Json<RunRequest>) -> Result<Json<Value>, ApiError> {
    let cfg = config_from(&req.config)?;
    let job_id = state.start_run(req.dataset, cfg)?;
    Ok(Json(json!({ "job_id": job_id })))
}

async fn status(State(state): State<AppState>) -> Json<Status> {
    Json(state.status())
}

#[derive(Debug, Deserialize)]
pub struct RankingQuery {
    pub top: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankedFrame {
    pub frame_id: usize,
    pub score: f64,
    /// 1-based position in the full ranking.
    pub rank: usize,
    /// Whether the frame may be tagged this round.
    pub presented: bool,
}

/// `?top=n` gives the first `n` of the full ranking; without it, the frames
/// presented for tagging, in rank order.
async fn ranking(State(state): State<AppState>, Query(q): Query<RankingQuery>) -> Result<Json<Vec<RankedFrame>>, ApiError> {
    state.with_loaded(|l| {
        let s = &l.session;
        let shown: HashSet<usize> = s.presented().iter().copied().collect();
        let item = |(r, &id): (usize, &usize)| RankedFrame {
            frame_id: id,
            score: s.scores().values()[id],
            rank: r + 1,
            presented: shown.contains(&id),
        };
        let items = s.ranking().iter().enumerate();
        Ok(Json(match q.top {
            Some(top) => items.take(top).map(item).collect(),
            None => items.filter(|(_, id)| shown.contains(id)).map(item).collect(),
        }))
    })
}

fn pgm_base64(height: usize, width: usize, values: &[f64]) -> String {
    B64.encode(encode_pgm(&GrayImage::from_unit(height, width, values)))
}

async fn frame(State(state): State<AppState>, Path(id): Path<usize>) -> Result<Json<Value>, ApiError> {
    state.with_loaded(|l| {
        let f = l
            .data
            .frames
            .frame(id)
            .ok_or_else(|| ApiError::NotFound(format!("no frame {id}")))?;
        let score = l.session.scores().values()[id];
        let anomaly = l.data.truth.as_ref().map(|gt| gt.is_anomaly(id));
        Ok(Json(match l.data.frames.shape() {
            FrameShape::Image { height, width } => json!({
                "frame_id": id,
                "kind": "image",
                "height": height,
                "width": width,
                "pgm_base64": pgm_base64(height, width, &f.data),
                "score": score,
                "ground_truth": anomaly,
            }),
            FrameShape::Vector { dim } => json!({
                "frame_id": id,
                "kind": "vector",
                "dim": dim,
                "values": f.data,
                "score": score,
                "ground_truth": anomaly,
            }),
        }))
    })
}

async fn saliency(State(state): State<AppState>, Path(id): Path<usize>) -> Result<Json<Value>, ApiError> {
    state.with_loaded(|l| {
        let f = l
            .data
            .frames
            .frame(id)
            .ok_or_else(|| ApiError::NotFound(format!("no frame {id}")))?;
        let FrameShape::Image { height, width } = l.data.frames.shape() else {
            return Err(ApiError::BadRequest("saliency needs image frames".into()));
        };
        let cam = cam_mean(l.session.working_models(), f)?;
        let map = upsample(&cam, height, width)?;
        let (row, col) = map.argmax();
        Ok(Json(json!({
            "frame_id": id,
            "height": height,
            "width": width,
            "pgm_base64": B64.encode(map.to_pgm()),
            "grid": map.grid,
            "cam_height": cam.height,
            "cam_width": cam.width,
            "cam": cam.grid,
            "argmax": [row, col],
        })))
    })
}

async fn feedback(State(state): State<AppState>, Json(fb): Json<Feedback>) -> Result<Json<Value>, ApiError> {
    if fb.is_empty() {
        return Err(ApiError::BadRequest("feedback tags no frames".into()));
    }
    let (job_id, round) = state.start_feedback(fb)?;
    Ok(Json(json!({ "job_id": job_id, "round": round })))
}

async fn history(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    state.with_loaded(|l| {
        if let Some(gt) = l.data.truth.as_ref().filter(|gt| gt.has_both_classes()) {
            let rounds = l
                .history
                .iter()
                .enumerate()
                .map(|(r, s)| Ok(json!({ "round": r, "auc": auc(s, gt)?.auc })))
                .collect::<Result<Vec<_>, ApiError>>()?;
            return Ok(Json(json!({ "kind": "auc", "rounds": rounds })));
        }
        let top = l.session.presented().len();
        let tops: Vec<Vec<usize>> = l
            .history
            .iter()
            .map(|s| s.ranking().into_iter().take(top).collect())
            .collect();
        let mut rounds = vec![json!({ "round": 0, "entered": [], "left": [] })];
        for (r, pair) in tops.windows(2).enumerate() {
            let before: HashSet<_> = pair[0].iter().collect();
            let after: HashSet<_> = pair[1].iter().collect();
            let entered: Vec<_> = pair[1].iter().filter(|i| !before.contains(i)).collect();
            let left: Vec<_> = pair[0].iter().filter(|i| !after.contains(i)).collect();
            rounds.push(json!({ "round": r + 1, "entered": entered, "left": left }));
        }
        Ok(Json(json!({ "kind": "ranking-change", "top": top, "rounds": rounds })))
    })
}

async fn reset(State(state): State<AppState>) -> Result<Json<Status>, ApiError> {
    state.reset()?;
    Ok(Json(state.status()))
}
