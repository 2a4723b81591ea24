//! HTTP API over the session runtime.
//!
//! | method | path                                   | body / reply                                 |
//! |--------|----------------------------------------|----------------------------------------------|
//! | POST   | `/sessions`                            | optional `{"id"}`; session view              |
//! | GET    | `/sessions`                            | session ids                                  |
//! | GET    | `/sessions/{id}`                       | session view                                 |
//! | POST   | `/sessions/{id}/input`                 | `{"text"}` or a WAV upload; turn report      |
//! | GET    | `/sessions/{id}/events`                | server-sent events; `?from=`, `?after=`      |
//! | GET    | `/sessions/{id}/log`                   | every event as a JSON array                  |
//! | POST   | `/sessions/{id}/frames`                | image bytes; asset                           |
//! | POST   | `/sessions/{id}/samples`               | encoded capture samples                      |
//! | GET    | `/sessions/{id}/assets/{asset}`        | asset bytes                                  |
//! | GET    | `/status`                              | availability document                        |
//! | POST   | `/providers/{name}/probe`              | availability record                          |
//! | POST   | `/admin/reload`                        | optional TOML config; availability document  |

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use copilot_core::assets::AssetError;
use copilot_core::audio::AudioError;
use copilot_core::config::ServiceConfig;
use copilot_core::events::SessionEvent;
use copilot_core::gateway::GatewayError;
use copilot_core::media::{MediaError, Sample, TrackLabel};
use copilot_core::runtime::{Runtime, RuntimeError};
use copilot_core::status::ServiceStatus;
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tower_http::cors::CorsLayer;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone)]
pub struct AppState {
    pub runtime: Arc<Runtime>,
    /// File re-read by `/admin/reload` when no config is posted.
    pub config_path: Option<PathBuf>,
    pub mock_all: bool,
}

/// JSON error reply: `{"error": "<Name>", "message": ".."}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub name: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, name: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            name: name.to_string(),
            message: message.into(),
        }
    }
}

pub fn status_for(e: &RuntimeError) -> StatusCode {
    match e {
        RuntimeError::UnknownSession(_) | RuntimeError::UnknownAsset(_) => StatusCode::NOT_FOUND,
        RuntimeError::InvalidSessionId(_) | RuntimeError::Config(_) => StatusCode::BAD_REQUEST,
        RuntimeError::SessionExists(_) | RuntimeError::CameraClosed => StatusCode::CONFLICT,
        RuntimeError::EmptyInput => StatusCode::UNPROCESSABLE_ENTITY,
        RuntimeError::Audio(AudioError::Transcribe(_)) => StatusCode::SERVICE_UNAVAILABLE,
        RuntimeError::Audio(_) => StatusCode::BAD_REQUEST,
        RuntimeError::Media(MediaError::NotRecording) => StatusCode::CONFLICT,
        RuntimeError::Media(_) => StatusCode::BAD_REQUEST,
        RuntimeError::Storage(AssetError::UnsupportedImage) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
        RuntimeError::Storage(_) | RuntimeError::Replay(_) => StatusCode::INTERNAL_SERVER_ERROR,
        RuntimeError::Gateway(GatewayError::UnknownProvider(_)) => StatusCode::NOT_FOUND,
        RuntimeError::Gateway(_) => StatusCode::BAD_GATEWAY,
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        Self::new(status_for(&e), e.name(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.name, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a blocking runtime call off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Runtime) -> Result<T, RuntimeError> + Send + 'static,
{
    let rt = state.runtime.clone();
    tokio::task::spawn_blocking(move || f(&rt))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/input", post(submit_input))
        .route("/sessions/{id}/events", get(event_stream))
        .route("/sessions/{id}/log", get(event_log))
        .route("/sessions/{id}/frames", post(post_frame))
        .route("/sessions/{id}/samples", post(post_samples))
        .route("/sessions/{id}/assets/{asset}", get(get_asset))
        .route("/status", get(status))
        .route("/providers/{name}/probe", post(probe))
        .route("/admin/reload", post(reload))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
struct CreateSession {
    id: Option<String>,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()))?
    };
    let view = blocking(&state, move |rt| match req.id {
        Some(id) => rt.create_session_with_id(&id),
        None => rt.create_session(),
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.runtime.session_ids())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&state, move |rt| rt.session(&id)).await?))
}

#[derive(Debug, Deserialize)]
struct TextInput {
    text: String,
}

fn content_type(headers: &HeaderMap) -> String {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase()
}

async fn submit_input(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let ct = content_type(&headers);
    let report = if ct.starts_with("audio/") || ct == "application/octet-stream" {
        blocking(&state, move |rt| rt.submit_audio(&id, &body)).await?
    } else {
        let input: TextInput = if ct == "text/plain" {
            TextInput {
                text: String::from_utf8_lossy(&body).into_owned(),
            }
        } else {
            serde_json::from_slice(&body)
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()))?
        };
        blocking(&state, move |rt| rt.submit_text(&id, &input.text)).await?
    };
    Ok(Json(report))
}

/// Resume point. `from` is inclusive; `after` and `Last-Event-ID` name the
/// last event already seen. With none of them the full history is sent.
#[derive(Debug, Default, Deserialize)]
struct Resume {
    from: Option<u64>,
    after: Option<u64>,
}

fn sse_event(e: &SessionEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind())
        .data(serde_json::to_string(e).expect("events serialize"))
}

/// Backlog first, then the live tail. A subscriber that falls too far
/// behind is disconnected and resumes with `Last-Event-ID`.
fn event_feed(
    backlog: Vec<SessionEvent>,
    rx: broadcast::Receiver<SessionEvent>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let last = backlog.last().map(|e| e.seq);
    let head = futures::stream::iter(backlog.into_iter().map(|e| Ok(sse_event(&e))));
    let tail = futures::stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if last.is_some_and(|l| e.seq <= l) => continue,
                Ok(e) => {
                    let seq = e.seq;
                    return Some((Ok(sse_event(&e)), (rx, Some(seq))));
                }
                Err(_) => return None,
            }
        }
    });
    futures::StreamExt::chain(head, tail)
}

async fn event_stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(resume): Query<Resume>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    let last_seen = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let after = match (resume.from, resume.after.or(last_seen)) {
        (Some(from), _) => from.checked_sub(1),
        (None, after) => after,
    };
    let (backlog, rx) = blocking(&state, move |rt| rt.subscribe(&id, after)).await?;
    Ok(Sse::new(event_feed(backlog, rx)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

async fn event_log(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&state, move |rt| rt.events(&id)).await?))
}

async fn post_frame(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let asset = blocking(&state, move |rt| rt.post_frame(&id, &body)).await?;
    Ok((StatusCode::CREATED, Json(asset)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireSample {
    /// Base64 encoded access unit.
    pub data: String,
    pub dts: u64,
    pub duration: u32,
    #[serde(default)]
    pub keyframe: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleBatch {
    /// `video`, `mic` or `speaker`.
    pub track: String,
    pub samples: Vec<WireSample>,
}

async fn post_samples(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(batch): Json<SampleBatch>,
) -> ApiResult<impl IntoResponse> {
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", m);
    let track = TrackLabel::ALL
        .into_iter()
        .find(|t| t.as_str() == batch.track)
        .ok_or_else(|| bad(format!("unknown track `{}`", batch.track)))?;
    let samples = batch
        .samples
        .into_iter()
        .map(|s| {
            let payload = STANDARD.decode(&s.data).map_err(|e| bad(e.to_string()))?;
            Ok(Sample::new(payload, s.dts, s.duration, s.keyframe))
        })
        .collect::<ApiResult<Vec<_>>>()?;
    let appended = blocking(&state, move |rt| rt.append_samples(&id, track, samples)).await?;
    Ok(Json(serde_json::json!({ "appended": appended })))
}

async fn get_asset(
    State(state): State<AppState>,
    Path((id, asset)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let (asset, bytes) = blocking(&state, move |rt| rt.asset_bytes(&id, &asset)).await?;
    let headers = [
        (header::CONTENT_TYPE, asset.mime().to_string()),
        (header::ETAG, format!("\"{}\"", asset.sha256)),
        (
            header::CONTENT_DISPOSITION,
            format!("inline; filename=\"{}\"", asset.filename),
        ),
    ];
    Ok((headers, bytes))
}

/// Reply of `GET /status`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusDocument {
    pub network_ok: bool,
    pub services: BTreeMap<String, ServiceStatus>,
    pub sessions: usize,
    pub version: String,
}

fn status_document(rt: &Runtime) -> StatusDocument {
    let status = rt.status();
    StatusDocument {
        network_ok: status.network_ok,
        services: status.services,
        sessions: rt.session_ids().len(),
        version: VERSION.to_string(),
    }
}

async fn status(State(state): State<AppState>) -> Json<StatusDocument> {
    Json(status_document(&state.runtime))
}

async fn probe(State(state): State<AppState>, Path(name): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&state, move |rt| rt.probe(&name)).await?))
}

async fn reload(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let current = state.runtime.config();
    let mut config = if body.iter().all(u8::is_ascii_whitespace) {
        match &state.config_path {
            Some(path) => ServiceConfig::load(path).map_err(RuntimeError::from)?,
            None => (*current).clone(),
        }
    } else {
        let text = std::str::from_utf8(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()))?;
        let mut cfg = ServiceConfig::from_toml(text).map_err(RuntimeError::from)?;
        cfg.data_dir = current.data_dir.clone();
        cfg
    };
    if state.mock_all {
        config.force_mocks();
    }
    let doc = blocking(&state, move |rt| {
        rt.reload(config)?;
        Ok(status_document(rt))
    })
    .await?;
    Ok(Json(doc))
}

/// Probes every provider on the configured interval until the task is
/// dropped.
pub async fn probe_loop(runtime: Arc<Runtime>) {
    loop {
        let interval = runtime.config().probe_interval();
        tokio::time::sleep(interval).await;
        let rt = runtime.clone();
        if tokio::task::spawn_blocking(move || rt.probe_all()).await.is_err() {
            tracing::warn!("probe task panicked");
        }
    }
}
