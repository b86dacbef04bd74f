//! HTTP API for interactive colorization, served under `/v1`.
//!
//! Every response is recomputed from the session image and the complete
//! edit list in the request, so results never depend on request order.

pub mod render;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;

use chromahint_core::colorspace::QuantizedGamut;
use chromahint_core::hints::{compute_global_hints, GlobalHints, PointEdit};
use chromahint_core::model::{Network, Variant};
use chromahint_core::palette::{PaletteConfig, PaletteEntry};
use chromahint_core::Error as CoreError;

pub use render::{encode_png, Prepared, DEFAULT_WORKING_SIDE};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub working_side: u32,
    /// Uploads with a longer side are rejected.
    pub max_side: u32,
    pub max_upload_bytes: usize,
    pub session_ttl: Duration,
    pub palette: PaletteConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            working_side: DEFAULT_WORKING_SIDE,
            max_side: 2048,
            max_upload_bytes: 32 << 20,
            session_ttl: Duration::from_secs(3600),
            palette: PaletteConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("the local checkpoint must be a local-variant model, got {0}")]
    LocalVariant(Variant),
    #[error("the global checkpoint must be a global-variant model, got {0}")]
    GlobalVariant(Variant),
    #[error("model predicts {model} bins but the gamut has {gamut}")]
    BinCount { model: usize, gamut: usize },
}

struct Session {
    image: Arc<Prepared>,
    last_used: Instant,
}

pub struct AppState {
    local: Network,
    global: Option<Network>,
    gamut: QuantizedGamut,
    config: ServiceConfig,
    local_hash: String,
    global_hash: Option<String>,
    sessions: Mutex<HashMap<String, Session>>,
}

impl AppState {
    pub fn new(local: Network, global: Option<Network>, gamut: QuantizedGamut, config: ServiceConfig) -> Result<Self, StartupError> {
        if local.variant() != Variant::Local {
            return Err(StartupError::LocalVariant(local.variant()));
        }
        for net in std::iter::once(&local).chain(global.as_ref()) {
            if net.config.q != gamut.q() {
                return Err(StartupError::BinCount { model: net.config.q, gamut: gamut.q() });
            }
        }
        if let Some(g) = &global {
            if g.variant() != Variant::Global {
                return Err(StartupError::GlobalVariant(g.variant()));
            }
        }
        Ok(Self {
            local_hash: local.weights_hash(),
            global_hash: global.as_ref().map(Network::weights_hash),
            local,
            global,
            gamut,
            config,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Prepared>, ApiError> {
        let mut sessions = self.sessions.lock().expect("session store poisoned");
        let ttl = self.config.session_ttl;
        sessions.retain(|_, s| s.last_used.elapsed() <= ttl);
        let s = sessions.get_mut(id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id:?}")))?;
        s.last_used = Instant::now();
        Ok(s.image.clone())
    }

    fn insert(&self, image: Prepared) -> String {
        let mut bytes = [0u8; 16];
        rand::rng().fill_bytes(&mut bytes);
        let id = hex::encode(bytes);
        let mut sessions = self.sessions.lock().expect("session store poisoned");
        let ttl = self.config.session_ttl;
        sessions.retain(|_, s| s.last_used.elapsed() <= ttl);
        sessions.insert(id.clone(), Session { image: Arc::new(image), last_used: Instant::now() });
        id
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session store poisoned").len()
    }
}

/// JSON error body `{error, index?}` with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub index: Option<usize>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), index: None }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let (status, index) = match &e {
            CoreError::EditOutOfBounds { index, .. } | CoreError::InvalidEdit { index, .. } => (StatusCode::UNPROCESSABLE_ENTITY, Some(*index)),
            CoreError::InvalidConfig(_) | CoreError::DimensionMismatch { .. } | CoreError::EmptyDistribution { .. } => (StatusCode::UNPROCESSABLE_ENTITY, None),
            CoreError::EmptyImage | CoreError::Image(_) | CoreError::ChannelCount(_) => (StatusCode::UNSUPPORTED_MEDIA_TYPE, None),
            CoreError::ModelMismatch(_) => (StatusCode::CONFLICT, None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        Self { status, message: e.to_string(), index }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(i) = self.index {
            body["index"] = json!(i);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn png_base64(img: &image::RgbImage) -> Result<String, ApiError> {
    Ok(STANDARD.encode(encode_png(img)?))
}

fn decode_upload(bytes: &[u8], max_side: u32) -> Result<image::DynamicImage, ApiError> {
    if bytes.is_empty() {
        return Err(ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "empty upload"));
    }
    let reader = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, e.to_string()))?;
    let (w, h) = reader.into_dimensions().map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, format!("cannot decode image: {e}")))?;
    if w.max(h) > max_side {
        return Err(ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, format!("image is {w}x{h}; the longest side may be at most {max_side}")));
    }
    image::load_from_memory(bytes).map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, format!("cannot decode image: {e}")))
}

/// Bytes of the first file part, preferring one named `field`.
async fn file_part(mut multipart: Multipart, field: &str) -> Result<(Vec<u8>, HashMap<String, String>), ApiError> {
    let mut file = None;
    let mut text = HashMap::new();
    while let Some(part) = multipart.next_field().await.map_err(|e| ApiError::new(e.status(), e.body_text()))? {
        let name = part.name().unwrap_or_default().to_string();
        let is_file = part.file_name().is_some() || name == field;
        let bytes = part.bytes().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        if is_file && (file.is_none() || name == field) {
            file = Some(bytes.to_vec());
        } else {
            text.insert(name, String::from_utf8_lossy(&bytes).into_owned());
        }
    }
    let file = file.ok_or_else(|| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, format!("multipart body has no {field:?} file")))?;
    Ok((file, text))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub width: usize,
    pub height: usize,
    pub auto_png_base64: String,
}

async fn create_session(State(state): State<Arc<AppState>>, multipart: Multipart) -> ApiResult<SessionCreated> {
    let (bytes, _) = file_part(multipart, "image").await?;
    let st = state.clone();
    let (prepared, png) = blocking(move || {
        let img = decode_upload(&bytes, st.config.max_side)?;
        let prepared = Prepared::new(&img, st.config.working_side)?;
        let png = png_base64(&prepared.colorize_local(&st.local, &[])?)?;
        Ok((prepared, png))
    })
    .await?;
    let (width, height) = (prepared.width(), prepared.height());
    let session_id = state.insert(prepared);
    Ok(Json(SessionCreated { session_id, width, height, auto_png_base64: png }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ColorizeRequest {
    #[serde(default)]
    pub edits: Vec<PointEdit>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageResponse {
    pub png_base64: String,
}

async fn colorize(State(state): State<Arc<AppState>>, Path(id): Path<String>, Json(req): Json<ColorizeRequest>) -> ApiResult<ImageResponse> {
    let image = state.session(&id)?;
    let png = blocking(move || png_base64(&image.colorize_local(&state.local, &req.edits)?)).await?;
    Ok(Json(ImageResponse { png_base64: png }))
}

#[derive(Debug, Deserialize)]
pub struct PaletteQuery {
    pub x: i64,
    pub y: i64,
    /// JSON list of edits, URL-encoded.
    pub edits: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PaletteResponse {
    pub suggestions: Vec<PaletteEntry>,
}

async fn palette(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<PaletteQuery>) -> ApiResult<PaletteResponse> {
    let image = state.session(&id)?;
    let edits: Vec<PointEdit> = match q.edits.as_deref() {
        None | Some("") => Vec::new(),
        Some(s) => serde_json::from_str(s).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("edits is not a valid edit list: {e}")))?,
    };
    let s = blocking(move || Ok(image.palette(&state.local, &state.gamut, q.x, q.y, &edits, &state.config.palette)?)).await?;
    Ok(Json(PaletteResponse { suggestions: s.entries }))
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GlobalFlags {
    pub hist: bool,
    pub sat: bool,
}

/// Explicit global statistics. Without `flags`, whichever of `histogram`
/// and `saturation` is present is revealed.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct GlobalRequest {
    pub histogram: Option<Vec<f32>>,
    pub saturation: Option<f32>,
    pub flags: Option<GlobalFlags>,
}

fn parse_flag(text: &HashMap<String, String>, key: &str, default: bool) -> Result<bool, ApiError> {
    match text.get(key).map(|s| s.trim()) {
        None => Ok(default),
        Some("1" | "true") => Ok(true),
        Some("0" | "false") => Ok(false),
        Some(other) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("{key} must be 0/1/true/false, got {other:?}"))),
    }
}

async fn global_transfer(State(state): State<Arc<AppState>>, Path(id): Path<String>, req: Request) -> ApiResult<ImageResponse> {
    let image = state.session(&id)?;
    if state.global.is_none() {
        return Err(ApiError::new(StatusCode::CONFLICT, "no global-variant checkpoint is configured"));
    }
    let content_type = req.headers().get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("").to_string();
    let q = state.gamut.q();
    let hints = if content_type.starts_with("multipart/form-data") {
        let multipart = Multipart::from_request(req, &()).await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        let (bytes, text) = file_part(multipart, "reference").await?;
        let hist = parse_flag(&text, "hist", true)?;
        let sat = parse_flag(&text, "sat", false)?;
        let st = state.clone();
        blocking(move || {
            let reference = Prepared::new(&decode_upload(&bytes, st.config.max_side)?, st.config.working_side)?;
            Ok(compute_global_hints(&reference.work_rgb, &st.gamut, hist, sat)?)
        })
        .await?
    } else if content_type.starts_with("application/json") {
        let Json(body): Json<GlobalRequest> = Json::from_request(req, &()).await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        let flags = body.flags.unwrap_or(GlobalFlags { hist: body.histogram.is_some(), sat: body.saturation.is_some() });
        let histogram = body.histogram.unwrap_or_else(|| vec![0.0; q]);
        if histogram.len() != q {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("histogram must have {q} entries, got {}", histogram.len())));
        }
        GlobalHints::new(histogram, flags.hist, body.saturation.unwrap_or(0.0), flags.sat)?
    } else {
        return Err(ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "expected multipart/form-data or application/json"));
    };
    let png = blocking(move || png_base64(&image.colorize_global(state.global.as_ref().expect("checked above"), &hints)?)).await?;
    Ok(Json(ImageResponse { png_base64: png }))
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "checkpoint_hash": state.local_hash,
        "global_checkpoint_hash": state.global_hash,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/colorize", post(colorize))
        .route("/v1/sessions/{id}/palette", get(palette))
        .route("/v1/sessions/{id}/global", post(global_transfer))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
