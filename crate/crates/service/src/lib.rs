//! HTTP session service. A human acts as the labeling oracle: each session trains
//! on its own worker thread, parks when a query round needs answers, and resumes
//! once every pending index is labeled.
//!
//! Routes, all JSON:
//!
//! - `POST /v1/sessions` creates a session from a CSV body (`text/csv`, with
//!   optional `label_column` and `config` query parameters) or a JSON body
//!   `{ "config": {...}, "synthetic": {...} | "csv": "..." }`.
//! - `GET /v1/sessions/{id}` returns the session state.
//! - `GET /v1/sessions/{id}/queries` lists unanswered queries, 404 if none.
//! - `POST /v1/sessions/{id}/labels` takes `{ "labels": [{ "index", "label" }] }`.
//! - `GET /v1/sessions/{id}/scores` returns ensemble or final scores.

mod error;
mod session;
mod store;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use imboost::data::{make_synthetic, read_csv, split_and_normalize, Dataset, SyntheticSpec};
use imboost::pipeline::RunConfig;
use imboost::query::Answer;
use serde::{Deserialize, Serialize};

pub use error::ApiError;
pub use session::{QueryItem, ScoreItem, ScoreKind, ScoresView, Session, SessionMetrics, SessionPhase, SessionState};
pub use store::Store;

use session::Setup;
use store::SessionRecord;

/// Shared handler state: live sessions and optional persistence.
#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<BTreeMap<String, Arc<Session>>>>,
    store: Option<Store>,
}

impl AppState {
    pub fn new(store: Option<Store>) -> Self {
        Self {
            sessions: Arc::default(),
            store,
        }
    }

    /// Reload and resume every session persisted in the store.
    pub fn restore(store: Store) -> imboost::Result<Self> {
        let state = Self::new(Some(store.clone()));
        for r in store.restore_all()? {
            let session = session::spawn(Setup {
                id: r.id.clone(),
                dataset: r.record.dataset,
                config: r.record.config,
                checkpoint: r.checkpoint,
                store: Some(store.clone()),
            })?;
            state.sessions.write().expect("session map").insert(r.id, session);
        }
        Ok(state)
    }

    /// Split and scale `dataset` with the run seed and start training.
    pub fn create_session(&self, dataset: Dataset, config: RunConfig) -> imboost::Result<Arc<Session>> {
        config.validate()?;
        let dataset = split_and_normalize(dataset, config.test_fraction, config.trainer.seed)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        if let Some(store) = &self.store {
            store.save_record(
                &id,
                &SessionRecord {
                    dataset: dataset.clone(),
                    config: config.clone(),
                },
            )?;
        }
        let session = session::spawn(Setup {
            id: id.clone(),
            dataset,
            config,
            checkpoint: None,
            store: self.store.clone(),
        })?;
        self.sessions.write().expect("session map").insert(id, Arc::clone(&session));
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map").keys().cloned().collect()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session).get(list_sessions))
        .route("/v1/sessions/{id}", get(get_state))
        .route("/v1/sessions/{id}/queries", get(get_queries))
        .route("/v1/sessions/{id}/labels", post(post_labels))
        .route("/v1/sessions/{id}/scores", get(get_scores))
        .with_state(state)
}

/// Serve the API on `addr` until interrupted.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Open the state directory if given and restore its sessions.
pub fn load_state(state_dir: Option<PathBuf>) -> imboost::Result<AppState> {
    match state_dir {
        Some(dir) => AppState::restore(Store::open(dir)?),
        None => Ok(AppState::default()),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CreateRequest {
    config: RunConfig,
    synthetic: Option<SyntheticSpec>,
    csv: Option<String>,
    label_column: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct CsvParams {
    label_column: Option<String>,
    /// Run configuration as a JSON document.
    config: Option<String>,
}

#[derive(Debug, Serialize)]
struct Created {
    id: String,
    state: SessionState,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    labels: Vec<Answer>,
}

#[derive(Debug, Serialize)]
struct LabelResponse {
    accepted: usize,
    /// State immediately after the answers were applied.
    state: SessionState,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

async fn create_session(
    State(state): State<AppState>,
    Query(params): Query<CsvParams>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let is_csv = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/csv"));
    let (dataset, config) = if is_csv {
        let config = match &params.config {
            Some(text) => parse_json(text.as_bytes())?,
            None => RunConfig::default(),
        };
        (read_csv(Cursor::new(body), params.label_column.as_deref())?, config)
    } else {
        let req: CreateRequest = parse_json(&body)?;
        let dataset = match (req.synthetic, req.csv) {
            (Some(spec), None) => make_synthetic(&spec)?,
            (None, Some(text)) => read_csv(Cursor::new(text.into_bytes()), req.label_column.as_deref())?,
            _ => return Err(ApiError::BadRequest("give exactly one of `synthetic` or `csv`".into())),
        };
        (dataset, req.config)
    };
    let session = state.create_session(dataset, config)?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            id: session.id.clone(),
            state: session.state(),
        }),
    ))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionState>> {
    let ids = state.session_ids();
    Json(ids.iter().filter_map(|id| state.session(id).ok()).map(|s| s.state()).collect())
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    Ok(Json(state.session(&id)?.state()))
}

async fn get_queries(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<QueryItem>>, ApiError> {
    let queries = state.session(&id)?.queries();
    if queries.is_empty() {
        return Err(ApiError::NotFound("no pending queries".into()));
    }
    Ok(Json(queries))
}

async fn post_labels(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<LabelResponse>, ApiError> {
    let session = state.session(&id)?;
    let req: LabelRequest = parse_json(&body)?;
    if req.labels.is_empty() {
        return Err(ApiError::BadRequest("no labels given".into()));
    }
    if session.state().phase != SessionPhase::AwaitingLabels {
        return Err(ApiError::Conflict("no query round is pending".into()));
    }
    let accepted = req.labels.len();
    let reply = session
        .deliver(req.labels)
        .ok_or_else(|| ApiError::Internal("session worker has stopped".into()))?;
    let state = reply
        .await
        .map_err(|_| ApiError::Internal("session worker has stopped".into()))??;
    Ok(Json(LabelResponse { accepted, state }))
}

async fn get_scores(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ScoresView>, ApiError> {
    Ok(Json(state.session(&id)?.scores()))
}
