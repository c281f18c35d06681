//! HTTP service for labeling demos with clicks.
//!
//! | method | path                  | body                 | response                   |
//! |--------|-----------------------|----------------------|----------------------------|
//! | GET    | `/demos`              |                      | `[DemoSummary]`            |
//! | GET    | `/demos/{id}`         |                      | `DemoFrames`               |
//! | PUT    | `/demos/{id}/clicks`  | `[bool]`             | `SaveResponse`             |
//! | POST   | `/demos/{id}/preview` | `{"clicks": [bool]}` | segmentation of the clicks |
//!
//! Errors come back as `{"error": msg}` with 404 for unknown demos or a
//! missing dataset, 422 for invalid input and 500 otherwise. The dataset
//! directory is the only state: clicks are written into the demo documents,
//! and an existing labeled block is recomputed from the new clicks.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use hydra_core::controller::ControllerConfig;
use hydra_core::segmenter::{attach_labels, label_modes, relabel_sparse_actions, Segmentation};
use hydra_core::sim::{render_frame, Primitive};
use hydra_core::traj::{demo_ids, load_demo, load_labeled, save_demo, save_labeled, Demonstration, Mode, ProprioState};
use hydra_core::HydraError;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

/// Demo metadata key holding the number of click saves.
pub const VERSION_META_KEY: &str = "clicks_version";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub id: String,
    pub length: usize,
    pub dt: f64,
    pub has_clicks: bool,
    pub has_labels: bool,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub index: usize,
    pub primitives: Vec<Primitive>,
    pub proprio: ProprioState,
    pub click: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub waypoint: Option<ProprioState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoFrames {
    pub id: String,
    pub dt: f64,
    pub version: u64,
    pub frames: Vec<FramePayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaveResponse {
    pub id: String,
    pub version: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PreviewRequest {
    pub clicks: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub dataset: PathBuf,
    /// Origins allowed by CORS, for a UI served from a dev server.
    pub cors_origins: Vec<String>,
    /// Used when recomputing relabeled actions after a click save.
    pub controller: ControllerConfig,
}

impl ServiceConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            cors_origins: vec!["http://localhost:5173".into(), "http://127.0.0.1:5173".into()],
            controller: ControllerConfig::default(),
        }
    }
}

#[derive(Clone)]
struct AppState {
    config: Arc<ServiceConfig>,
    /// One write lock per demo id.
    locks: Arc<Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>>,
}

impl AppState {
    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut map = self.locks.lock().expect("lock map poisoned");
        map.entry(id.to_string()).or_default().clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn unprocessable(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: message.into(),
        }
    }
}

impl From<HydraError> for ApiError {
    fn from(e: HydraError) -> Self {
        let status = match &e {
            HydraError::NotFound(_) => StatusCode::NOT_FOUND,
            HydraError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn version_of(demo: &Demonstration) -> u64 {
    demo.meta.get(VERSION_META_KEY).and_then(|v| v.parse().ok()).unwrap_or(0)
}

/// Run blocking dataset i/o off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?
}

fn known_demo(root: &Path, id: &str) -> Result<Demonstration, ApiError> {
    if !demo_ids(root)?.iter().any(|d| d == id) {
        return Err(HydraError::NotFound(format!("demo {id}")).into());
    }
    Ok(load_demo(root, id)?)
}

pub fn summarize_demo(root: &Path, id: &str) -> Result<DemoSummary, HydraError> {
    let demo = load_demo(root, id)?;
    Ok(DemoSummary {
        id: demo.id.clone(),
        length: demo.len(),
        dt: demo.dt,
        has_clicks: demo.steps.iter().any(|s| s.click),
        has_labels: load_labeled(root, &demo)?.is_some(),
        version: version_of(&demo),
    })
}

pub fn demo_frames(root: &Path, demo: &Demonstration) -> Result<DemoFrames, HydraError> {
    let labels = load_labeled(root, demo)?;
    let frames = demo
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| FramePayload {
            index: i,
            primitives: render_frame(&s.obs),
            proprio: s.obs.proprio,
            click: s.click,
            mode: labels.as_ref().map(|l| l[i].mode),
            waypoint: labels.as_ref().map(|l| l[i].waypoint),
        })
        .collect();
    Ok(DemoFrames {
        id: demo.id.clone(),
        dt: demo.dt,
        version: version_of(demo),
        frames,
    })
}

async fn list_demos(State(state): State<AppState>) -> ApiResult<Vec<DemoSummary>> {
    let root = state.config.dataset.clone();
    blocking(move || {
        let mut ids = demo_ids(&root)?;
        ids.sort();
        let out = ids.iter().map(|id| summarize_demo(&root, id)).collect::<Result<Vec<_>, _>>()?;
        Ok(Json(out))
    })
    .await
}

async fn get_demo(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<DemoFrames> {
    let root = state.config.dataset.clone();
    blocking(move || {
        let demo = known_demo(&root, &id)?;
        Ok(Json(demo_frames(&root, &demo)?))
    })
    .await
}

async fn put_clicks(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(clicks): Json<Vec<bool>>,
) -> ApiResult<SaveResponse> {
    let lock = state.lock_for(&id);
    let _guard = lock.lock().await;
    let root = state.config.dataset.clone();
    let ctrl = state.config.controller;
    blocking(move || {
        let mut demo = known_demo(&root, &id)?;
        if clicks.len() != demo.len() {
            return Err(ApiError::unprocessable(format!(
                "expected {} clicks for demo {id}, got {}",
                demo.len(),
                clicks.len()
            )));
        }
        let version = version_of(&demo) + 1;
        demo.set_clicks(&clicks);
        demo.meta.insert(VERSION_META_KEY.into(), version.to_string());
        // Keep an existing labeled block consistent with the new clicks.
        let old = load_labeled(&root, &demo)?;
        save_demo(&root, &demo)?;
        if let Some(old) = old {
            let seg = label_modes(&clicks, &demo.proprio())?;
            let steps = if old.iter().any(|s| s.relabeled) {
                relabel_sparse_actions(&demo, &seg, &ctrl)
            } else {
                attach_labels(&demo, &seg)
            };
            save_labeled(&root, &demo, &steps)?;
        }
        log::info!("saved clicks for {id} (version {version})");
        Ok(Json(SaveResponse { id, version }))
    })
    .await
}

async fn preview(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Option<Json<PreviewRequest>>,
) -> ApiResult<Segmentation> {
    let root = state.config.dataset.clone();
    let requested = body.and_then(|Json(b)| b.clicks);
    blocking(move || {
        let demo = known_demo(&root, &id)?;
        let clicks = match requested {
            Some(c) if c.len() != demo.len() => {
                return Err(ApiError::unprocessable(format!(
                    "expected {} clicks for demo {id}, got {}",
                    demo.len(),
                    c.len()
                )))
            }
            Some(c) => c,
            None if demo.steps.iter().any(|s| s.click) => demo.clicks(),
            None => return Err(ApiError::unprocessable(format!("demo {id} has no clicks to preview"))),
        };
        Ok(Json(label_modes(&clicks, &demo.proprio())?))
    })
    .await
}

pub fn router(config: ServiceConfig) -> Router {
    let origins: Vec<HeaderValue> = config.cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
    let cors = CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::PUT, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    let state = AppState {
        config: Arc::new(config),
        locks: Arc::default(),
    };
    Router::new()
        .route("/demos", get(list_demos))
        .route("/demos/{id}", get(get_demo))
        .route("/demos/{id}/clicks", put(put_clicks))
        .route("/demos/{id}/preview", post(preview))
        .layer(cors)
        .with_state(state)
}

/// Serve until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(config)).await
}
