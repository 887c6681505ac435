use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use imboost::data::{make_synthetic, SyntheticSpec};
use imboost::pipeline::{run_simulated, RunConfig};
use imboost_service::{router, AppState, Store};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    send(app, req).await
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
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

async fn raw_post(app: &Router, uri: &str, content_type: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header(header::CONTENT_TYPE, content_type)
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

fn quick_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.trainer.t0 = 2;
    c.trainer.t1 = 4;
    c.trainer.t2 = 4;
    c.trainer.ta = 2;
    c.trainer.hidden = vec![8, 8];
    c.trainer.score_mc = 2;
    c.trainer.seed = 5;
    c
}

fn quick_spec() -> SyntheticSpec {
    SyntheticSpec {
        n: 200,
        seed: 5,
        ..SyntheticSpec::default()
    }
}

async fn create(app: &Router, config: &RunConfig) -> String {
    let (status, body) = call(
        app,
        "POST",
        "/v1/sessions",
        Some(json!({ "config": config, "synthetic": quick_spec() })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

/// Poll the state until the phase is one of `phases`.
async fn wait_for(app: &Router, id: &str, phases: &[&str]) -> Value {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (status, state) = call(app, "GET", &format!("/v1/sessions/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if phases.contains(&state["phase"].as_str().unwrap()) {
            return state;
        }
        assert_ne!(state["phase"], "FAILED", "{state}");
        assert!(Instant::now() < deadline, "timed out waiting for {phases:?}: {state}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

fn truth_label(row_index: usize) -> &'static str {
    let labels = make_synthetic(&quick_spec()).unwrap().labels.unwrap();
    if labels[row_index] {
        "outlier"
    } else {
        "inlier"
    }
}

/// Answer every round with ground truth until the session is done.
async fn answer_until_done(app: &Router, id: &str) {
    loop {
        let state = wait_for(app, id, &["AWAITING_LABELS", "DONE"]).await;
        if state["phase"] == "DONE" {
            return;
        }
        let (status, queries) = call(app, "GET", &format!("/v1/sessions/{id}/queries"), None).await;
        assert_eq!(status, StatusCode::OK);
        let labels: Vec<Value> = queries
            .as_array()
            .unwrap()
            .iter()
            .map(|q| json!({ "index": q["index"], "label": truth_label(q["row_index"].as_u64().unwrap() as usize) }))
            .collect();
        let (status, body) = call(app, "POST", &format!("/v1/sessions/{id}/labels"), Some(json!({ "labels": labels }))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }
}

fn final_scores(scores: &Value) -> Vec<(usize, f64)> {
    assert_eq!(scores["kind"], "final");
    scores["scores"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["row_index"].as_u64().unwrap() as usize, s["score"].as_f64().unwrap()))
        .collect()
}

fn simulated_scores(config: &RunConfig) -> Vec<(usize, f64)> {
    let out = run_simulated(make_synthetic(&quick_spec()).unwrap(), config).unwrap();
    out.scores.iter().map(|r| (r.row_index, r.score)).collect()
}

#[tokio::test]
async fn unknown_session_is_404_everywhere() {
    let app = router(AppState::default());
    for (method, path) in [
        ("GET", "/v1/sessions/nope"),
        ("GET", "/v1/sessions/nope/queries"),
        ("GET", "/v1/sessions/nope/scores"),
    ] {
        assert_eq!(call(&app, method, path, None).await.0, StatusCode::NOT_FOUND, "{path}");
    }
    let labels = json!({ "labels": [{ "index": 0, "label": "inlier" }] });
    assert_eq!(
        call(&app, "POST", "/v1/sessions/nope/labels", Some(labels)).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn new_session_starts_in_warmup_at_round_zero() {
    let app = router(AppState::default());
    let mut config = quick_config();
    // a long warm-up keeps the session observable in its first phase
    config.trainer.t1 = 1_000_000;
    let (status, created) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(json!({ "config": config, "synthetic": quick_spec() })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["state"]["phase"], "WARMUP");
    assert_eq!(created["state"]["round"], 0);
    let id = created["id"].as_str().unwrap();
    let (status, state) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["phase"], "WARMUP");
    assert_eq!(state["round"], 0);
    assert_eq!(state["n_train"].as_u64().unwrap() + state["n_test"].as_u64().unwrap(), 200);

    let (status, _) = call(&app, "GET", &format!("/v1/sessions/{id}/queries"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, scores) = call(&app, "GET", &format!("/v1/sessions/{id}/scores"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(scores["kind"], "none");
    let labels = json!({ "labels": [{ "index": 0, "label": "inlier" }] });
    let (status, _) = call(&app, "POST", &format!("/v1/sessions/{id}/labels"), Some(labels)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, list) = call(&app, "GET", "/v1/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let app = router(AppState::default());
    let (status, _) = raw_post(&app, "/v1/sessions", "application/json", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/v1/sessions", Some(json!({ "config": {} }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "a dataset source is required");
    let (status, _) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(json!({ "synthetic": quick_spec(), "csv": "a,label\n1,0\n" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "two dataset sources");
    let (status, _) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(json!({ "synthetic": quick_spec(), "config": { "t2": 5, "ta": 2 } })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "Ta must divide T2");
    let (status, _) = raw_post(&app, "/v1/sessions", "text/csv", "a,b\n1,x\n").await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "non-numeric cell");

    let id = create(&app, &quick_config()).await;
    let uri = format!("/v1/sessions/{id}/labels");
    for body in [
        json!([{ "index": 0, "label": "inlier" }]),
        json!({ "labels": [{ "index": 0, "label": "maybe" }] }),
        json!({ "labels": [{ "index": -1, "label": "inlier" }] }),
        json!({ "labels": [] }),
    ] {
        let (status, _) = call(&app, "POST", &uri, Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    }
}

#[tokio::test]
async fn labeling_conflicts_leave_the_round_unchanged() {
    let app = router(AppState::default());
    let id = create(&app, &quick_config()).await;
    let state = wait_for(&app, &id, &["AWAITING_LABELS"]).await;
    assert_eq!(state["round"], 1);
    let (_, queries) = call(&app, "GET", &format!("/v1/sessions/{id}/queries"), None).await;
    let queries = queries.as_array().unwrap().clone();
    assert_eq!(queries.len(), 6);
    assert_eq!(state["pending"], 6);
    for q in &queries {
        assert_eq!(q["features"].as_array().unwrap().len(), 2);
        assert_eq!(q["raw"].as_array().unwrap().len(), 2);
        assert!(q["ensemble_loss"].is_f64());
        let p = q["posterior_inlier"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    let pending: Vec<u64> = queries.iter().map(|q| q["index"].as_u64().unwrap()).collect();
    let outsider = (0..).find(|i| !pending.contains(i)).unwrap();
    let uri = format!("/v1/sessions/{id}/labels");

    // one bad index rejects the whole request
    let body = json!({ "labels": [
        { "index": pending[0], "label": "inlier" },
        { "index": outsider, "label": "inlier" },
    ] });
    assert_eq!(call(&app, "POST", &uri, Some(body)).await.0, StatusCode::CONFLICT);
    let (_, after) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(after, state);

    // a partial answer keeps the round open
    let first = &queries[0];
    let label = truth_label(first["row_index"].as_u64().unwrap() as usize);
    let body = json!({ "labels": [{ "index": first["index"], "label": label }] });
    let (status, resp) = call(&app, "POST", &uri, Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["state"]["phase"], "AWAITING_LABELS");
    assert_eq!(resp["state"]["pending"], 5);
    let (_, remaining) = call(&app, "GET", &format!("/v1/sessions/{id}/queries"), None).await;
    assert_eq!(remaining.as_array().unwrap().len(), 5);

    // the same index again is already labeled
    assert_eq!(call(&app, "POST", &uri, Some(body)).await.0, StatusCode::CONFLICT);

    let rest: Vec<Value> = queries[1..]
        .iter()
        .map(|q| json!({ "index": q["index"], "label": truth_label(q["row_index"].as_u64().unwrap() as usize) }))
        .collect();
    let (status, resp) = call(&app, "POST", &uri, Some(json!({ "labels": rest }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_ne!(resp["state"]["phase"], "AWAITING_LABELS");
    assert_eq!(resp["state"]["pending"], 0);
    assert_eq!(
        resp["state"]["labeled_inliers"].as_u64().unwrap() + resp["state"]["labeled_outliers"].as_u64().unwrap(),
        6
    );
}

#[tokio::test]
async fn human_answers_reproduce_the_simulated_run_bit_for_bit() {
    let app = router(AppState::default());
    let config = quick_config();
    let id = create(&app, &config).await;
    answer_until_done(&app, &id).await;
    let (status, scores) = call(&app, "GET", &format!("/v1/sessions/{id}/scores"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(final_scores(&scores), simulated_scores(&config));
    assert!(scores["metrics"]["auc_test"].is_f64());
    let (_, state) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(state["round"], 2);
    assert_eq!(state["pending"], 0);
}

#[tokio::test]
async fn csv_upload_runs_to_completion() {
    let app = router(AppState::default());
    let data = make_synthetic(&SyntheticSpec { n: 120, ..quick_spec() }).unwrap();
    let mut csv = String::from("x1,x2,label\n");
    for (row, label) in data.features.rows().into_iter().zip(data.labels.unwrap()) {
        csv.push_str(&format!("{},{},{}\n", row[0], row[1], u8::from(label)));
    }
    let config = serde_json::to_string(&quick_config()).unwrap();
    let uri = format!("/v1/sessions?label_column=label&config={}", encode(&config));
    let (status, created) = raw_post(&app, &uri, "text/csv", &csv).await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    let id = created["id"].as_str().unwrap().to_string();
    loop {
        let state = wait_for(&app, &id, &["AWAITING_LABELS", "DONE"]).await;
        if state["phase"] == "DONE" {
            break;
        }
        let (_, queries) = call(&app, "GET", &format!("/v1/sessions/{id}/queries"), None).await;
        let labels: Vec<Value> = queries
            .as_array()
            .unwrap()
            .iter()
            .map(|q| json!({ "index": q["index"], "label": "inlier" }))
            .collect();
        let (status, _) = call(&app, "POST", &format!("/v1/sessions/{id}/labels"), Some(json!({ "labels": labels }))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, scores) = call(&app, "GET", &format!("/v1/sessions/{id}/scores"), None).await;
    assert_eq!(final_scores(&scores).len(), 120);
}

/// Percent-encode everything outside the unreserved set.
fn encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

#[tokio::test]
async fn sessions_survive_a_restart_mid_round() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config();
    let id = {
        let app = router(AppState::new(Some(Store::open(dir.path()).unwrap())));
        let id = create(&app, &config).await;
        wait_for(&app, &id, &["AWAITING_LABELS"]).await;
        id
    };
    let restored = AppState::restore(Store::open(dir.path()).unwrap()).unwrap();
    assert_eq!(restored.session_ids(), vec![id.clone()]);
    let app = router(restored);
    let state = wait_for(&app, &id, &["AWAITING_LABELS"]).await;
    assert_eq!(state["round"], 1);
    answer_until_done(&app, &id).await;
    let (_, scores) = call(&app, "GET", &format!("/v1/sessions/{id}/scores"), None).await;
    assert_eq!(final_scores(&scores), simulated_scores(&config));
}
