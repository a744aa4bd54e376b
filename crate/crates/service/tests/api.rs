use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vadrank_service::{router, AppState, Phase};

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn wait_until_idle(app: &Router) -> Value {
    for _ in 0..600 {
        let (_, s) = call(app, "GET", "/status", None).await;
        if !s["busy"].as_bool().unwrap() {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job did not finish");
}

fn vector_run() -> Value {
    json!({
        "dataset": {"kind": "synth-vector", "k_normal": 60, "k_anomaly": 6, "dim": 4, "separation": 5.0, "seed": 1},
        "config": {"seed": 3, "iterations": 2, "epochs": 4}
    })
}

async fn finished_run(dir: &Path) -> Router {
    let app = router(AppState::open(dir).unwrap());
    let (code, body) = call(&app, "POST", "/run", Some(vector_run())).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    let s = wait_until_idle(&app).await;
    assert_eq!(s["phase"], "ready", "{s}");
    app
}

#[tokio::test]
async fn fresh_directory_is_idle() {
    let tmp = tempfile::tempdir().unwrap();
    let app = router(AppState::open(tmp.path()).unwrap());
    let (code, s) = call(&app, "GET", "/status", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(s["phase"], "idle");
    assert_eq!(s["busy"], false);
    let (code, _) = call(&app, "GET", "/ranking?top=5", None).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn ranking_after_a_run_is_top_five_descending() {
    let tmp = tempfile::tempdir().unwrap();
    let app = finished_run(tmp.path()).await;
    let (code, r) = call(&app, "GET", "/ranking?top=5", None).await;
    assert_eq!(code, StatusCode::OK);
    let items = r.as_array().unwrap();
    assert_eq!(items.len(), 5);
    for (i, w) in items.windows(2).enumerate() {
        assert!(w[0]["score"].as_f64() >= w[1]["score"].as_f64());
        assert_eq!(w[0]["rank"], i + 1);
    }
    let (code, f) = call(&app, "GET", "/frame/0", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(f["kind"], "vector");
    assert_eq!(f["values"].as_array().unwrap().len(), 4);
    let (code, _) = call(&app, "GET", "/frame/9999", None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn feedback_while_a_job_runs_conflicts() {
    let tmp = tempfile::tempdir().unwrap();
    let state = AppState::open(tmp.path()).unwrap();
    let app = router(state.clone());
    let _slot = state.try_begin(Phase::FineTuning { round: 1 }).unwrap();
    let (code, body) = call(&app, "POST", "/feedback", Some(json!({"anomalies": [0], "normals": []}))).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("fine-tuning"));
    let (code, _) = call(&app, "POST", "/run", Some(vector_run())).await;
    assert_eq!(code, StatusCode::CONFLICT);
}

#[tokio::test]
async fn feedback_round_updates_ranking_history_and_survives_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let app = finished_run(tmp.path()).await;
    let (_, r) = call(&app, "GET", "/ranking", None).await;
    let shown: Vec<u64> = r.as_array().unwrap().iter().map(|i| i["frame_id"].as_u64().unwrap()).collect();
    assert_eq!(shown.len(), 6);

    let bad = json!({"anomalies": [shown[0]], "normals": [shown[0]]});
    let (code, _) = call(&app, "POST", "/feedback", Some(bad)).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    let hidden = (0..66).find(|i| !shown.contains(i)).unwrap();
    let (code, _) = call(&app, "POST", "/feedback", Some(json!({"anomalies": [hidden], "normals": []}))).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    let (code, _) = call(&app, "POST", "/feedback", Some(json!({"anomalies": [], "normals": []}))).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);

    let fb = json!({"anomalies": [shown[0]], "normals": [shown[5]]});
    let (code, body) = call(&app, "POST", "/feedback", Some(fb)).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    assert_eq!(body["round"], 1);
    let s = wait_until_idle(&app).await;
    assert_eq!(s["phase"], "ready");
    assert_eq!(s["round"], 1);

    let (_, h) = call(&app, "GET", "/history", None).await;
    assert_eq!(h["kind"], "auc");
    assert_eq!(h["rounds"].as_array().unwrap().len(), 2);
    let (_, after) = call(&app, "GET", "/ranking", None).await;

    // a new process sees the same state
    let reopened = router(AppState::open(tmp.path()).unwrap());
    let (_, s) = call(&reopened, "GET", "/status", None).await;
    assert_eq!(s["phase"], "ready");
    assert_eq!(s["round"], 1);
    let (_, again) = call(&reopened, "GET", "/ranking", None).await;
    assert_eq!(again, after);
    let (_, h2) = call(&reopened, "GET", "/history", None).await;
    assert_eq!(h2, h);

    let (code, s) = call(&reopened, "POST", "/reset", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(s["round"], 0);
    let (_, back) = call(&reopened, "GET", "/ranking", None).await;
    assert_eq!(back, r);
}

#[tokio::test]
async fn reads_do_not_change_state() {
    let tmp = tempfile::tempdir().unwrap();
    let app = finished_run(tmp.path()).await;
    let first = call(&app, "GET", "/ranking?top=10", None).await;
    for uri in ["/status", "/history", "/frame/3", "/ranking"] {
        call(&app, "GET", uri, None).await;
    }
    assert_eq!(call(&app, "GET", "/ranking?top=10", None).await, first);
}

#[tokio::test]
async fn bad_run_requests_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let app = router(AppState::open(tmp.path()).unwrap());
    let mut req = vector_run();
    req["config"]["epochz"] = json!(3);
    let (code, body) = call(&app, "POST", "/run", Some(req)).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("epochz"));
}

#[tokio::test]
async fn corrupt_run_directory_is_refused_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let _app = finished_run(tmp.path()).await;
    std::fs::write(tmp.path().join("iter_1").join("model.ckpt"), b"garbage").unwrap();
    let err = AppState::open(tmp.path()).err().expect("corrupt checkpoint");
    assert!(err.to_string().contains("iter_1"), "{err}");
}

#[tokio::test]
async fn interrupted_run_resumes_on_open() {
    let tmp = tempfile::tempdir().unwrap();
    let app = finished_run(tmp.path()).await;
    let (_, full) = call(&app, "GET", "/ranking?top=20", None).await;
    std::fs::remove_dir_all(tmp.path().join("iter_2")).unwrap();
    std::fs::remove_file(tmp.path().join("scores.csv")).unwrap();

    let state = AppState::open(tmp.path()).unwrap();
    assert_eq!(state.status().phase, Phase::Idle);
    assert!(state.resume_pending().unwrap().is_some());
    let app = router(state);
    let s = wait_until_idle(&app).await;
    assert_eq!(s["phase"], "ready");
    let (_, resumed) = call(&app, "GET", "/ranking?top=20", None).await;
    assert_eq!(resumed, full);
}

#[tokio::test]
async fn saliency_on_image_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let app = router(AppState::open(tmp.path()).unwrap());
    let req = json!({
        "dataset": {"kind": "synth-image", "k_normal": 30, "k_anomaly": 4, "height": 16, "width": 16, "seed": 2},
        "config": {"seed": 1, "iterations": 1, "epochs": 2, "arch": "conv-gap-linear"}
    });
    let (code, body) = call(&app, "POST", "/run", Some(req)).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    let s = wait_until_idle(&app).await;
    assert_eq!(s["phase"], "ready", "{s}");
    let (code, sal) = call(&app, "GET", "/frame/0/saliency", None).await;
    assert_eq!(code, StatusCode::OK, "{sal}");
    assert_eq!(sal["grid"].as_array().unwrap().len(), 256);
    assert!(sal["pgm_base64"].as_str().unwrap().len() > 256);
    let (_, f) = call(&app, "GET", "/frame/0", None).await;
    assert_eq!(f["kind"], "image");
}
