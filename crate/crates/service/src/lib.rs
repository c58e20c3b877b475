//! Session-based HTTP API around [`InteractiveSession`].
//!
//! Control messages are JSON; volumes go up as concatenated RV3D files and
//! slices come back as raw little-endian `f32` rows.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use iterseg::datagen::rv3d::{self, VolumeKind};
use iterseg::datagen::{initial_segmentation, InitMethod};
use iterseg::geodesy::{GeodesicConfig, HintLabel};
use iterseg::neural::Checkpoint;
use iterseg::session::{Axis, InteractiveSession, Layer, StepReport};
use iterseg::volume::{LabelMask, ProbabilityMap, Volume3D, VoxelCoord};
use serde::{Deserialize, Serialize};

/// Largest accepted upload.
pub const MAX_UPLOAD_BYTES: usize = 512 << 20;

pub const SLICE_CHANNELS: &str = "x-slice-channels";
pub const SLICE_HEIGHT: &str = "x-slice-height";
pub const SLICE_WIDTH: &str = "x-slice-width";

/// Error body `{code, message}` with its status.
#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn no_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "SESSION_NOT_FOUND", format!("no session {id}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request("BAD_JSON", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request("BAD_QUERY", e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Where sessions find their model.
#[derive(Debug, Default)]
pub struct ServiceConfig {
    /// Directory holding named checkpoint directories.
    pub checkpoint_root: Option<PathBuf>,
    /// Used when a session names no checkpoint.
    pub default_checkpoint: Option<Checkpoint>,
    pub geodesy: GeodesicConfig,
}

struct Slot {
    model: Arc<Checkpoint>,
    current: RwLock<Arc<InteractiveSession>>,
    /// Serialises mutations of this session.
    writer: tokio::sync::Mutex<()>,
    stepping: AtomicBool,
}

impl Slot {
    fn snapshot(&self) -> Arc<InteractiveSession> {
        Arc::clone(&self.current.read().expect("session lock"))
    }

    fn publish(&self, s: InteractiveSession) {
        *self.current.write().expect("session lock") = Arc::new(s);
    }
}

/// Clears the in-flight flag however the step ends.
struct StepGuard<'a>(&'a AtomicBool);

impl Drop for StepGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

struct Shared {
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    root: Option<PathBuf>,
    default_model: Option<Arc<Checkpoint>>,
    cache: Mutex<HashMap<PathBuf, Arc<Checkpoint>>>,
    geodesy: GeodesicConfig,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        Self(Arc::new(Shared {
            sessions: RwLock::new(HashMap::new()),
            root: cfg.checkpoint_root,
            default_model: cfg.default_checkpoint.map(Arc::new),
            cache: Mutex::new(HashMap::new()),
            geodesy: cfg.geodesy,
        }))
    }

    pub fn session_count(&self) -> usize {
        self.0.sessions.read().expect("session table").len()
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        self.0
            .sessions
            .read()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::no_session(id))
    }

    fn model(&self, name: Option<&str>) -> ApiResult<Arc<Checkpoint>> {
        let Some(name) = name else {
            return self.0.default_model.clone().ok_or_else(|| {
                ApiError::new(
                    StatusCode::NOT_FOUND,
                    "CHECKPOINT_NOT_FOUND",
                    "no default checkpoint configured",
                )
            });
        };
        let relative = Path::new(name);
        if !relative.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(ApiError::bad_request(
                "BAD_CHECKPOINT",
                format!("checkpoint name {name:?} must be relative"),
            ));
        }
        let missing = || {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "CHECKPOINT_NOT_FOUND",
                format!("no checkpoint {name:?}"),
            )
        };
        let root = self.0.root.as_ref().ok_or_else(missing)?;
        let dir = root.join(relative);
        if let Some(m) = self.0.cache.lock().expect("checkpoint cache").get(&dir) {
            return Ok(Arc::clone(m));
        }
        if !dir.is_dir() {
            return Err(missing());
        }
        let model = Arc::new(
            Checkpoint::load(&dir)
                .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "CHECKPOINT_NOT_FOUND", e.to_string()))?,
        );
        self.0
            .cache
            .lock()
            .expect("checkpoint cache")
            .insert(dir, Arc::clone(&model));
        Ok(model)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/clicks", post(add_click))
        .route("/sessions/{id}/step", post(refine_step))
        .route("/sessions/{id}/slices", get(get_slice))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateQuery {
    /// Initial segmentation when no prob volume is uploaded; `bg` by default.
    pub init: Option<String>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub dims: [usize; 3],
    pub step: usize,
    pub has_truth: bool,
    pub object_clicks: usize,
    pub background_clicks: usize,
    pub dice: Option<f64>,
}

fn info(id: &str, s: &InteractiveSession) -> ApiResult<SessionInfo> {
    Ok(SessionInfo {
        id: id.to_string(),
        dims: s.dims().as_array(),
        step: s.step_count(),
        has_truth: s.has_truth(),
        object_clicks: s.hint_sets().object.len(),
        background_clicks: s.hint_sets().background.len(),
        dice: s.dice().map_err(ApiError::internal)?,
    })
}

/// Splits an upload of concatenated RV3D files by kind.
fn parse_upload(body: &[u8]) -> ApiResult<HashMap<VolumeKind, Volume3D>> {
    let origin = Path::new("<upload>");
    let mut out = HashMap::new();
    let mut rest = body;
    while !rest.is_empty() {
        let (kind, vol, used) =
            rv3d::decode_prefix(rest, origin).map_err(|e| ApiError::bad_request("BAD_VOLUME", e.to_string()))?;
        if out.insert(kind, vol).is_some() {
            return Err(ApiError::bad_request(
                "BAD_VOLUME",
                format!("{kind:?} volume uploaded twice"),
            ));
        }
        rest = &rest[used..];
    }
    Ok(out)
}

fn dims_mismatch(what: &str, e: iterseg::Error) -> ApiError {
    ApiError::bad_request("DIMS_MISMATCH", format!("{what}: {e}"))
}

async fn create_session(
    State(state): State<AppState>,
    query: Result<Query<CreateQuery>, QueryRejection>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let Query(query) = query?;
    let mut volumes = parse_upload(&body)?;
    let image = volumes
        .remove(&VolumeKind::Image)
        .ok_or_else(|| ApiError::bad_request("MISSING_IMAGE", "upload holds no image volume"))?;
    let dims = image.dims();
    let prob = match volumes.remove(&VolumeKind::Prob) {
        Some(p) => {
            dims.ensure_same(p.dims()).map_err(|e| dims_mismatch("prob", e))?;
            ProbabilityMap::new(p).map_err(|e| ApiError::bad_request("BAD_VOLUME", e.to_string()))?
        }
        None => {
            let method: InitMethod = query
                .init
                .as_deref()
                .unwrap_or("bg")
                .parse()
                .map_err(|e: iterseg::Error| ApiError::bad_request("BAD_QUERY", e.to_string()))?;
            if matches!(method, InitMethod::External(_)) {
                return Err(ApiError::bad_request(
                    "BAD_QUERY",
                    "upload the prob volume instead of naming a file",
                ));
            }
            initial_segmentation(&image, &method).map_err(ApiError::internal)?
        }
    };
    let truth = match volumes.remove(&VolumeKind::Label) {
        Some(t) => {
            dims.ensure_same(t.dims()).map_err(|e| dims_mismatch("label", e))?;
            Some(LabelMask::new(t).map_err(|e| ApiError::bad_request("BAD_VOLUME", e.to_string()))?)
        }
        None => None,
    };
    let model = state.model(query.checkpoint.as_deref())?;
    let session = InteractiveSession::new(image, prob, truth)
        .map_err(|e| dims_mismatch("session", e))?
        .with_geodesy(state.0.geodesy);
    let id = uuid::Uuid::new_v4().simple().to_string();
    let body = info(&id, &session)?;
    let slot = Arc::new(Slot {
        model,
        current: RwLock::new(Arc::new(session)),
        writer: tokio::sync::Mutex::new(()),
        stepping: AtomicBool::new(false),
    });
    state.0.sessions.write().expect("session table").insert(id, slot);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn session_info(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionInfo>> {
    let slot = state.slot(&id)?;
    Ok(Json(info(&id, &slot.snapshot())?))
}

async fn delete_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    match state.0.sessions.write().expect("session table").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::no_session(&id)),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClickRequest {
    pub x: i64,
    pub y: i64,
    pub z: i64,
    pub label: HintLabel,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClickResponse {
    /// False when the click was already recorded.
    pub added: bool,
    pub object_clicks: usize,
    pub background_clicks: usize,
}

async fn add_click(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    req: Result<Json<ClickRequest>, JsonRejection>,
) -> ApiResult<Json<ClickResponse>> {
    let slot = state.slot(&id)?;
    let Json(req) = req?;
    let _writer = slot.writer.lock().await;
    let mut session = (*slot.snapshot()).clone();
    let dims = session.dims();
    if !dims.contains(req.x, req.y, req.z) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "OUT_OF_BOUNDS",
            format!("voxel ({}, {}, {}) is outside {dims}", req.x, req.y, req.z),
        ));
    }
    let at = VoxelCoord::new(req.x as usize, req.y as usize, req.z as usize);
    let added = session.add_click(req.label, at).map_err(ApiError::internal)?;
    let body = ClickResponse {
        added,
        object_clicks: session.hint_sets().object.len(),
        background_clicks: session.hint_sets().background.len(),
    };
    if added {
        slot.publish(session);
    }
    Ok(Json(body))
}

async fn refine_step(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<StepReport>> {
    let slot = state.slot(&id)?;
    if slot.stepping.swap(true, Ordering::AcqRel) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "STEP_IN_PROGRESS",
            "a step is already running for this session",
        ));
    }
    let _guard = StepGuard(&slot.stepping);
    let _writer = slot.writer.lock().await;
    let mut session = (*slot.snapshot()).clone();
    let model = Arc::clone(&slot.model);
    let (session, report) = tokio::task::spawn_blocking(move || {
        let report = session.step(&model);
        (session, report)
    })
    .await
    .map_err(ApiError::internal)?;
    let report = report.map_err(ApiError::internal)?;
    slot.publish(session);
    Ok(Json(report))
}

#[derive(Debug, Deserialize)]
pub struct SliceQuery {
    pub axis: String,
    pub index: i64,
    pub layer: String,
}

async fn get_slice(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<SliceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let Query(q) = query?;
    let axis: Axis = q
        .axis
        .parse()
        .map_err(|e: iterseg::Error| ApiError::bad_request("BAD_QUERY", e.to_string()))?;
    let layer: Layer = q
        .layer
        .parse()
        .map_err(|e: iterseg::Error| ApiError::bad_request("BAD_QUERY", e.to_string()))?;
    let session = slot.snapshot();
    let bad_index = |e: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "BAD_INDEX", e);
    let index = usize::try_from(q.index).map_err(|_| bad_index(format!("negative slice index {}", q.index)))?;
    let slice = session
        .slice(axis, index, layer)
        .map_err(|e| bad_index(e.to_string()))?;
    let bytes: Vec<u8> = slice.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let mut resp = (StatusCode::OK, bytes).into_response();
    let h = resp.headers_mut();
    h.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/octet-stream"),
    );
    h.insert(SLICE_CHANNELS, HeaderValue::from(slice.channels));
    h.insert(SLICE_HEIGHT, HeaderValue::from(slice.height));
    h.insert(SLICE_WIDTH, HeaderValue::from(slice.width));
    Ok(resp)
}
