//! JSON-over-HTTP endpoints the demo-collection UI talks to.
//!
//! | method | path                     | body                                         |
//! |--------|--------------------------|----------------------------------------------|
//! | GET    | `/failures`              |                                              |
//! | POST   | `/sessions`              | `{config_id}`                                |
//! | GET    | `/sessions/{id}/state`   |                                              |
//! | POST   | `/sessions/{id}/action`  | `{element_index, action_type, action_arg}`   |
//! | POST   | `/sessions/{id}/finish`  | `{success}`                                  |
//! | POST   | `/screenshot_demos`      | `{failure_id, action}`                       |
//!
//! Every response carries `schema_version`. Errors are `{schema_version, error}`
//! with a 4xx status.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use uinav_core::model::{AgentAction, MacroResult};
use uinav_core::orchestrator::{SessionError, SessionManager, SessionState};
use uinav_core::persistence::{append_demo, CorpusEntry};

pub const WIRE_VERSION: u32 = 1;

#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<Mutex<SessionManager>>,
    /// Finished episodes and screenshot demos are appended here.
    pub demos_out: PathBuf,
}

impl AppState {
    pub fn new(manager: SessionManager, demos_out: PathBuf) -> Self {
        AppState {
            manager: Arc::new(Mutex::new(manager)),
            demos_out,
        }
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"schema_version": WIRE_VERSION, "error": self.1}))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::UnknownFailure(_) | SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::Finished(_) => StatusCode::CONFLICT,
            SessionError::Invalid(_) => StatusCode::BAD_REQUEST,
            SessionError::Env(_) | SessionError::Rollout(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn ok(mut v: Value) -> ApiResult {
    v["schema_version"] = json!(WIRE_VERSION);
    Ok(Json(v))
}

fn lock(s: &AppState) -> std::sync::MutexGuard<'_, SessionManager> {
    s.manager.lock().unwrap_or_else(|p| p.into_inner())
}

fn persist(s: &AppState, entry: &CorpusEntry) -> Result<(), ApiError> {
    append_demo(&s.demos_out, entry).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

#[derive(Serialize)]
struct FailureSummary<'a> {
    id: &'a str,
    app_id: &'a str,
    utterance: &'a uinav_core::model::Utterance,
    steps: usize,
    final_screen: &'a uinav_core::model::ScreenRepresentation,
    final_frame: &'a uinav_core::sim::PixelGrid,
}

async fn failures(State(s): State<AppState>) -> ApiResult {
    let m = lock(&s);
    let list: Vec<FailureSummary> = m
        .failures()
        .iter()
        .map(|f| FailureSummary {
            id: &f.id,
            app_id: &f.config.app_id,
            utterance: &f.config.utterance,
            steps: f.steps,
            final_screen: &f.final_screen,
            final_frame: &f.final_frame,
        })
        .collect();
    ok(json!({ "failures": list }))
}

#[derive(Deserialize)]
struct OpenBody {
    config_id: String,
}

async fn open_session(State(s): State<AppState>, Json(b): Json<OpenBody>) -> ApiResult {
    let id = lock(&s).open(&b.config_id)?;
    ok(json!({ "session_id": id }))
}

fn state_json(st: &SessionState) -> Value {
    serde_json::to_value(st).expect("state serializes")
}

async fn session_state(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult {
    let st = lock(&s).get(id)?.state()?;
    ok(json!({ "state": state_json(&st) }))
}

async fn session_action(State(s): State<AppState>, Path(id): Path<u64>, Json(a): Json<AgentAction>) -> ApiResult {
    let mut m = lock(&s);
    let session = m.get_mut(id)?;
    let result: MacroResult = session.act(a)?;
    let st = session.state()?;
    ok(json!({ "result": result, "state": state_json(&st) }))
}

#[derive(Deserialize)]
struct FinishBody {
    success: bool,
}

async fn session_finish(State(s): State<AppState>, Path(id): Path<u64>, Json(b): Json<FinishBody>) -> ApiResult {
    let episode = lock(&s).get_mut(id)?.finish(b.success)?;
    let steps = episode.steps.len();
    persist(&s, &CorpusEntry::episode(episode))?;
    ok(json!({ "persisted": true, "steps": steps }))
}

#[derive(Deserialize)]
struct ScreenshotBody {
    failure_id: String,
    action: AgentAction,
}

async fn screenshot_demo(State(s): State<AppState>, Json(b): Json<ScreenshotBody>) -> ApiResult {
    let demo = lock(&s).screenshot_demo(&b.failure_id, b.action)?;
    persist(&s, &CorpusEntry::Screenshot(demo))?;
    ok(json!({ "persisted": true }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/failures", get(failures))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/action", post(session_action))
        .route("/sessions/{id}/finish", post(session_finish))
        .route("/screenshot_demos", post(screenshot_demo))
        .with_state(state)
}

/// Binds `addr` and serves until the process exits. Returns the bound
/// address through `on_bound` (useful with port 0).
pub async fn serve(addr: SocketAddr, state: AppState, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    log::info!("listening on {local}");
    on_bound(local);
    axum::serve(listener, router(state)).await
}
