//! Local HTTP service for the interactive segmentation loop: upload an
//! image once, then post scribbles and parameters as often as needed.
//!
//! | Method | Path | Body | Responses |
//! |---|---|---|---|
//! | `POST` | `/api/sessions` | image bytes (PNG/PPM), raw or multipart | `201 {"id", "width", "height"}`, `400` |
//! | `POST` | `/api/sessions/{id}/segment` | [`SegmentRequest`] | `200` [`SegmentResponse`], `404`, `409`, `422` |
//! | `GET` | `/api/sessions/{id}/result` | | `200` latest [`SegmentResponse`], `204`, `404` |
//! | `GET` | `/api/health` | | `200 {"status": "ok", ...}` |
//!
//! Errors carry `{"error": "<reason>"}`.

pub mod rle;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use lapseg_core::resample::{decode_image, encode_labelmap};
use lapseg_core::{Error as CoreError, RgbImage, SegConfig, SegmentationResult};
use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;

pub use rle::{decode_runs, encode_runs, Run};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Sessions untouched for this long are dropped.
    pub idle_timeout: Duration,
    /// Directory served at `/` (the web UI), if any.
    pub static_dir: Option<PathBuf>,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            idle_timeout: Duration::from_secs(30 * 60),
            static_dir: None,
            max_body_bytes: 256 << 20,
        }
    }
}

/// Body of `POST /api/sessions/{id}/segment`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    /// `[class, start, length]` triples over row-major pixels.
    pub runs: Vec<Run>,
    /// Defaults to the largest class id in `runs`.
    #[serde(default)]
    pub num_classes: Option<usize>,
    /// Overrides of the default configuration, e.g. `{"k": 8}`.
    #[serde(default)]
    pub config: Option<SegConfig>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentResponse {
    /// Base64 of the indexed label-map PNG.
    pub labels_png: String,
    #[serde(flatten)]
    pub report: SegmentationResult,
}

struct Session {
    image: Arc<RgbImage>,
    busy: AtomicBool,
    data: Mutex<SessionData>,
}

struct SessionData {
    last_used: Instant,
    config: SegConfig,
    scribbles: Option<lapseg_core::LabelMap>,
    latest: Option<Arc<SegmentResponse>>,
}

pub struct AppState {
    sessions: Mutex<HashMap<Uuid, Arc<Session>>>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            sessions: Mutex::new(HashMap::new()),
            config,
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drops sessions idle for longer than the timeout; returns how many.
    pub fn purge_expired(&self, now: Instant) -> usize {
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        let timeout = self.config.idle_timeout;
        sessions.retain(|_, s| {
            s.busy.load(Ordering::Acquire)
                || now.saturating_duration_since(s.data.lock().unwrap().last_used) < timeout
        });
        before - sessions.len()
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let not_found = || ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}"));
        let id = Uuid::parse_str(id).map_err(|_| not_found())?;
        let s = self.sessions.lock().unwrap().get(&id).cloned().ok_or_else(not_found)?;
        s.data.lock().unwrap().last_used = Instant::now();
        Ok(s)
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn unprocessable(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
}

/// Routes of the API, plus the static UI when configured.
pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body_bytes;
    let static_dir = state.config.static_dir.clone();
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/segment", post(run_segmentation))
        .route("/api/sessions/{id}/result", get(get_result))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "sessions": state.session_count(),
        "workers": lapseg_core::exec::worker_count(),
    }))
}

async fn image_bytes(req: Request) -> Result<Vec<u8>, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        let body = axum::body::to_bytes(req.into_body(), usize::MAX)
            .await
            .map_err(|e| bad_request(format!("cannot read body: {e}")))?;
        return Ok(body.to_vec());
    }
    let mut form = Multipart::from_request(req, &())
        .await
        .map_err(|e| bad_request(e.body_text()))?;
    // the field named "image", or else the first one
    let mut first = None;
    while let Some(field) = form.next_field().await.map_err(|e| bad_request(e.body_text()))? {
        let named = field.name() == Some("image");
        let bytes = field.bytes().await.map_err(|e| bad_request(e.body_text()))?;
        if named {
            return Ok(bytes.to_vec());
        }
        first.get_or_insert(bytes.to_vec());
    }
    first.ok_or_else(|| bad_request("multipart body has no fields"))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    req: Request,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let bytes = image_bytes(req).await?;
    if bytes.is_empty() {
        return Err(bad_request("empty image body"));
    }
    let image = tokio::task::spawn_blocking(move || decode_image(&bytes))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| bad_request(e.to_string()))?;
    let id = Uuid::new_v4();
    let (width, height) = (image.width(), image.height());
    let session = Session {
        image: Arc::new(image),
        busy: AtomicBool::new(false),
        data: Mutex::new(SessionData {
            last_used: Instant::now(),
            config: SegConfig::default(),
            scribbles: None,
            latest: None,
        }),
    };
    state.sessions.lock().unwrap().insert(id, Arc::new(session));
    log::info!("session {id} created ({width}x{height})");
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": id.to_string(), "width": width, "height": height })),
    ))
}

/// Clears the busy flag however the request ends.
struct BusyGuard(Arc<Session>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

/// Runs the full pipeline and packages the response, exactly as the CLI
/// would for the same inputs.
pub fn segment_to_response(
    image: &RgbImage,
    seeds: &lapseg_core::LabelMap,
    cfg: &SegConfig,
) -> Result<SegmentResponse, CoreError> {
    let report = lapseg_core::segment(image, seeds, cfg)?;
    let png = encode_labelmap(&report.labels)?;
    Ok(SegmentResponse {
        labels_png: base64::engine::general_purpose::STANDARD.encode(png),
        report,
    })
}

async fn run_segmentation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<SegmentRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<Arc<SegmentResponse>>, ApiError> {
    let session = state.session(&id)?;
    let Json(req) = body.map_err(|e| ApiError(e.status(), e.body_text()))?;
    if session
        .busy
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(ApiError(
            StatusCode::CONFLICT,
            "a segmentation is already running for this session".into(),
        ));
    }
    let _guard = BusyGuard(session.clone());

    let image = session.image.clone();
    let seeds = decode_runs(image.width(), image.height(), &req.runs, req.num_classes)
        .map_err(unprocessable)?;
    let cfg = req.config.unwrap_or_default();
    let (seeds_job, cfg_job) = (seeds.clone(), cfg.clone());
    let outcome = tokio::task::spawn_blocking(move || segment_to_response(&image, &seeds_job, &cfg_job))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let response = match outcome {
        Ok(r) => Arc::new(r),
        Err(e @ (CoreError::Parameter(_) | CoreError::MissingSeeds | CoreError::TooManyClasses(_))) => {
            return Err(unprocessable(e.to_string()))
        }
        Err(e) => return Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    };
    let mut data = session.data.lock().unwrap();
    data.config = cfg;
    data.scribbles = Some(seeds);
    data.latest = Some(response.clone());
    data.last_used = Instant::now();
    Ok(Json(response))
}

async fn get_result(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let latest = session.data.lock().unwrap().latest.clone();
    Ok(match latest {
        Some(r) => Json(r).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

/// Serves until Ctrl-C, sweeping idle sessions once a minute.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let dropped = sweeper.purge_expired(Instant::now());
            if dropped > 0 {
                log::info!("expired {dropped} idle sessions");
            }
        }
    });
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
