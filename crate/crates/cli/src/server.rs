//! HTTP access to renders and edit sessions. Scenes are loaded once and
//! shared read-only; sessions are small records naming the scenes they
//! combine, so a composite never copies plane data.

use std::collections::{BTreeMap, HashMap};
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::{Arc, Mutex};

use attrfield::config::SceneConfig;
use attrfield::container::load_scene;
use attrfield::image_io::{encode_rgb_png, encode_semantic_png};
use attrfield::indexing::AttributeCatalog;
use attrfield::sampling::{Camera, DEFAULT_DIST};
use attrfield::scene::{Scene, SceneView};
use attrfield::Error;
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

pub const SCENE_EXTENSION: &str = "attrscn";
pub const SESSION_CAPACITY: usize = 64;
pub const MAX_RES: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub base: String,
    pub source: String,
    pub label: usize,
}

pub struct AppState {
    scenes: BTreeMap<String, Arc<Scene>>,
    sessions: Mutex<LruCache<String, Session>>,
    fallback_catalog: AttributeCatalog,
}

impl AppState {
    pub fn new(scenes: BTreeMap<String, Scene>) -> Self {
        Self {
            scenes: scenes.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
            sessions: Mutex::new(LruCache::new(NonZeroUsize::new(SESSION_CAPACITY).unwrap())),
            fallback_catalog: SceneConfig::default().catalog,
        }
    }

    /// Every `*.attrscn` file in `dir`, keyed by file stem.
    pub fn load_dir(dir: &Path) -> attrfield::Result<Self> {
        let mut scenes = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(SCENE_EXTENSION) {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            scenes.insert(id.to_string(), load_scene(&path)?);
        }
        Ok(Self::new(scenes))
    }

    pub fn scene_ids(&self) -> Vec<&str> {
        self.scenes.keys().map(String::as_str).collect()
    }

    fn scene(&self, id: &str) -> Result<Arc<Scene>, ApiError> {
        self.scenes
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene `{id}`")))
    }

    fn session(&self, id: &str) -> Result<Session, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown edit session `{id}`")))
    }
}

/// Content hash of an edit request; equal requests share one session.
pub fn session_id(base: &str, source: &str, attribute: &str) -> String {
    let mut h = Sha256::new();
    for part in [base, source, attribute] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::CatalogMismatch => StatusCode::UNPROCESSABLE_ENTITY,
            Error::UnknownAttribute(_) | Error::LabelOutOfRange { .. } | Error::InvalidCamera(_) | Error::Config(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/attributes", get(attributes))
        .route("/scenes", get(scenes))
        .route("/render", get(render))
        .route("/edit", post(edit))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({ "status": "ok", "scenes": state.scenes.len() })).into_response()
}

async fn attributes(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let scene = match q.get("scene") {
        Some(id) => Some(state.scene(id)?),
        None => state.scenes.values().next().cloned(),
    };
    let catalog = scene.as_ref().map_or(&state.fallback_catalog, |s| &s.catalog);
    let list: Vec<_> = catalog
        .names()
        .iter()
        .enumerate()
        .map(|(label, name)| json!({ "label": label, "name": name }))
        .collect();
    Ok(Json(json!({ "attributes": list })).into_response())
}

async fn scenes(State(state): State<Arc<AppState>>) -> Response {
    let list: Vec<_> = state
        .scenes
        .iter()
        .map(|(id, s)| {
            let active: Vec<&str> = s.defaults.active.iter().map(|&l| s.catalog.name(l)).collect();
            json!({ "id": id, "active": active, "resolution": s.defaults.resolution })
        })
        .collect();
    Json(json!({ "scenes": list })).into_response()
}

fn number<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str, default: T) -> Result<T, ApiError> {
    match q.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::bad_request(format!("query parameter `{key}`: cannot parse `{v}`"))),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Layer {
    Rgb,
    Semantic,
}

async fn render(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let session = q.get("edit").map(|id| state.session(id)).transpose()?;
    let base_id = match (&session, q.get("scene")) {
        (Some(s), Some(id)) if *id != s.base => {
            return Err(ApiError::bad_request(format!(
                "scene `{id}` is not the base of edit session (base `{}`)",
                s.base
            )))
        }
        (Some(s), _) => s.base.clone(),
        (None, Some(id)) => id.clone(),
        (None, None) => return Err(ApiError::bad_request("missing query parameter `scene`")),
    };
    let base = state.scene(&base_id)?;
    let source = match &session {
        Some(s) => Some((state.scene(&s.source)?, s.label)),
        None => None,
    };

    let yaw = number(&q, "yaw", 0.0f64)?;
    let pitch = number(&q, "pitch", 0.0f64)?;
    let dist = number(&q, "dist", DEFAULT_DIST)?;
    let res = number(&q, "res", base.defaults.resolution)?;
    if res == 0 || res > MAX_RES {
        return Err(ApiError::bad_request(format!("`res` must be between 1 and {MAX_RES}")));
    }
    let layer = match q.get("layer").map(String::as_str) {
        None | Some("rgb") => Layer::Rgb,
        Some("semantic") => Layer::Semantic,
        Some(other) => return Err(ApiError::bad_request(format!("unknown layer `{other}`"))),
    };
    let cam = Camera::orbit(yaw, pitch, dist, res)?;
    let mut active = match q.get("attrs") {
        Some(csv) => base.catalog.parse_list(csv)?,
        None => base.defaults.active.clone(),
    };
    if active.is_empty() {
        return Err(ApiError::bad_request("`attrs` lists no attributes"));
    }
    if let Some((_, label)) = source {
        if !active.contains(&label) {
            active.push(label);
        }
    }

    let png = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, Error> {
        let mut view = SceneView::new(&base);
        if let Some((src, label)) = &source {
            view = view.with_swap(src, *label)?;
        }
        let out = view.render(&cam, &active, &base.rest_pose())?;
        match layer {
            Layer::Rgb => encode_rgb_png(&out),
            Layer::Semantic => encode_semantic_png(&out),
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    base: String,
    source: String,
    attribute: String,
}

async fn edit(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: EditRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed edit request: {e}")))?;
    let base = state.scene(&req.base)?;
    let source = state.scene(&req.source)?;
    if base.catalog != source.catalog {
        return Err(Error::CatalogMismatch.into());
    }
    let label = base.catalog.label(&req.attribute)?;
    let id = session_id(&req.base, &req.source, &req.attribute);
    state.sessions.lock().unwrap().put(
        id.clone(),
        Session {
            base: req.base.clone(),
            source: req.source.clone(),
            label,
        },
    );
    Ok(Json(json!({
        "session": id,
        "base": req.base,
        "source": req.source,
        "attribute": req.attribute,
    }))
    .into_response())
}

/// Bind and serve until the process is stopped.
pub async fn serve(state: Arc<AppState>, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
