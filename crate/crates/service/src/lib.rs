//! HTTP service over a completed run.
//!
//! Routes (all JSON unless noted):
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/run` | summary plus the full `communities.json` content |
//! | GET | `/api/clusters/{id}/images?page=N` | 50 members per page, by spectrum position then id |
//! | GET | `/api/images/{id}/thumbnail` | PNG, at most 128 px per side |
//! | GET | `/api/spectrum` | `spectrum.json` |
//! | POST | `/api/labels` | `{cluster_id \| image_id, label, actor?, if_revision?}` |
//! | GET | `/api/labels` | current label state |
//! | GET | `/api/export` | CSV `id,path,label` |
//! | GET | `/api/report/*` | files from the run's `report/` directory |
//!
//! Pipeline artifacts are only read. Label state lives in `labels.json`.

mod store;
mod thumbs;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;
use wavecomm::artifacts::{CommunitiesFile, RunLayout};
use wavecomm::dataset::read_manifest;
use wavecomm::spectrum::SpectrumReport;

pub use store::{Action, AuditEntry, LabelState, LabelStore};

pub const PAGE_SIZE: usize = 50;
pub const THUMBNAIL_SIZE: u32 = 128;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Pipeline(#[from] wavecomm::Error),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            ServiceError::Internal(_) | ServiceError::Pipeline(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

/// Immutable view of a run directory.
#[derive(Debug)]
pub struct RunData {
    pub layout: RunLayout,
    pub communities: CommunitiesFile,
    pub spectrum: Option<SpectrumReport>,
    pub paths: HashMap<String, PathBuf>,
    cluster_of: HashMap<String, usize>,
    positions: HashMap<String, f64>,
}

impl RunData {
    pub fn load(root: &Path) -> Result<Self, ServiceError> {
        let layout = RunLayout::new(root);
        let communities: CommunitiesFile = wavecomm::artifacts::read_json(&layout.communities())?;
        let manifest = read_manifest(&layout.require(layout.manifest())?)?;
        let paths = manifest.into_iter().map(|e| (e.id, e.path)).collect();
        let spectrum = match wavecomm::artifacts::read_spectrum(&layout.spectrum()) {
            Ok(s) => Some(s),
            Err(wavecomm::Error::MissingArtifact(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let cluster_of = communities
            .clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |m| (m.clone(), c.id)))
            .collect();
        let positions = spectrum
            .iter()
            .flat_map(|s| s.placements.iter().map(|p| (p.id.clone(), p.position)))
            .collect();
        Ok(Self {
            layout,
            communities,
            spectrum,
            paths,
            cluster_of,
            positions,
        })
    }

    pub fn cluster_of(&self, image_id: &str) -> Option<usize> {
        self.cluster_of.get(image_id).copied()
    }

    /// Members ordered by spectrum position (images without one last),
    /// then id.
    pub fn ordered_members(&self, cluster: usize) -> Option<Vec<&str>> {
        let c = self.communities.clusters.iter().find(|c| c.id == cluster)?;
        let mut members: Vec<&str> = c.members.iter().map(String::as_str).collect();
        members.sort_by(|a, b| {
            let pa = self.positions.get(*a).copied().unwrap_or(f64::INFINITY);
            let pb = self.positions.get(*b).copied().unwrap_or(f64::INFINITY);
            pa.total_cmp(&pb).then_with(|| a.cmp(b))
        });
        Some(members)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Required as `Authorization: Bearer <token>` or `?token=` when set.
    pub token: Option<String>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

pub struct AppState {
    run: Option<RunData>,
    labels: Option<Mutex<LabelStore>>,
    thumb_lock: Mutex<()>,
    config: ServiceConfig,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    /// Opens `run_dir`. A directory without `communities.json` gives a
    /// service that answers 404 on every run route.
    pub fn open(run_dir: &Path, config: ServiceConfig) -> Result<SharedState, ServiceError> {
        let layout = RunLayout::new(run_dir);
        let (run, labels) = if layout.communities().is_file() {
            let run = RunData::load(run_dir)?;
            let store = LabelStore::open(&layout.labels())?;
            (Some(run), Some(Mutex::new(store)))
        } else {
            (None, None)
        };
        Ok(Arc::new(Self {
            run,
            labels,
            thumb_lock: Mutex::new(()),
            config,
        }))
    }

    fn run(&self) -> Result<&RunData, ServiceError> {
        self.run
            .as_ref()
            .ok_or_else(|| ServiceError::NotFound("no completed run is loaded".into()))
    }

    fn labels(&self) -> Result<&Mutex<LabelStore>, ServiceError> {
        self.labels
            .as_ref()
            .ok_or_else(|| ServiceError::NotFound("no completed run is loaded".into()))
    }
}

pub fn router(state: SharedState) -> Router {
    let cors = match &state.config.cors_origin {
        Some(origin) => match HeaderValue::from_str(origin) {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::new(),
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);

    let mut api = Router::new()
        .route("/api/run", get(get_run))
        .route("/api/clusters/{id}/images", get(get_cluster_images))
        .route("/api/images/{id}/thumbnail", get(get_thumbnail))
        .route("/api/spectrum", get(get_spectrum))
        .route("/api/labels", get(get_labels).post(post_labels))
        .route("/api/export", get(get_export));
    if let Some(run) = &state.run {
        api = api.nest_service("/api/report", ServeDir::new(run.layout.report_dir()));
    }
    api.layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(cors)
        .with_state(state)
}

async fn require_token(State(state): State<SharedState>, req: Request, next: Next) -> Response {
    let Some(expected) = &state.config.token else {
        return next.run(req).await;
    };
    if req.method() == axum::http::Method::OPTIONS {
        return next.run(req).await;
    }
    let header_ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == expected);
    let query_ok = req.uri().query().is_some_and(|q| {
        q.split('&')
            .filter_map(|kv| kv.split_once('='))
            .any(|(k, v)| k == "token" && percent_encoding::percent_decode_str(v).decode_utf8_lossy() == *expected)
    });
    if header_ok || query_ok {
        next.run(req).await
    } else {
        ServiceError::Unauthorized("missing or wrong token".into()).into_response()
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    n_images: usize,
    cluster_sizes: Vec<usize>,
    has_spectrum: bool,
    #[serde(flatten)]
    communities: &'a CommunitiesFile,
}

async fn get_run(State(state): State<SharedState>) -> Result<Response, ServiceError> {
    let run = state.run()?;
    Ok(Json(RunSummary {
        n_images: run.communities.images.len(),
        cluster_sizes: run.communities.clusters.iter().map(|c| c.size).collect(),
        has_spectrum: run.spectrum.is_some(),
        communities: &run.communities,
    })
    .into_response())
}

#[derive(Deserialize)]
struct PageQuery {
    page: Option<usize>,
}

#[derive(Serialize)]
struct ImageItem {
    id: String,
    label: Option<String>,
    position: Option<f64>,
    thumbnail: String,
}

/// Everything outside RFC 3986 "unreserved", so ids containing `/` stay
/// one path segment.
const SEGMENT: &percent_encoding::AsciiSet = &percent_encoding::NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~');

pub fn encode_segment(s: &str) -> String {
    percent_encoding::utf8_percent_encode(s, SEGMENT).to_string()
}

async fn get_cluster_images(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<usize>,
    Query(q): Query<PageQuery>,
) -> Result<Response, ServiceError> {
    let run = state.run()?;
    let members = run
        .ordered_members(id)
        .ok_or_else(|| ServiceError::NotFound(format!("no cluster {id}")))?;
    let page = q.page.unwrap_or(0);
    let store = state.labels()?.lock().await;
    let labels = store.state();
    let images: Vec<ImageItem> = members
        .iter()
        .skip(page.saturating_mul(PAGE_SIZE))
        .take(PAGE_SIZE)
        .map(|m| ImageItem {
            id: m.to_string(),
            label: labels.effective_label(m, Some(id)).map(str::to_string),
            position: run.positions.get(*m).copied(),
            thumbnail: format!("/api/images/{}/thumbnail", encode_segment(m)),
        })
        .collect();
    Ok(Json(json!({
        "cluster_id": id,
        "page": page,
        "page_size": PAGE_SIZE,
        "total": members.len(),
        "pages": members.len().div_ceil(PAGE_SIZE),
        "images": images,
    }))
    .into_response())
}

async fn get_thumbnail(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ServiceError> {
    let run = state.run()?;
    let source = run
        .paths
        .get(&id)
        .ok_or_else(|| ServiceError::NotFound(format!("no image {id:?}")))?
        .clone();
    let cache = run.layout.thumbs_dir();
    let bytes = {
        let _guard = state.thumb_lock.lock().await;
        let id = id.clone();
        tokio::task::spawn_blocking(move || thumbs::cached_thumbnail(&cache, &id, &source, THUMBNAIL_SIZE))
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))??
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn get_spectrum(State(state): State<SharedState>) -> Result<Response, ServiceError> {
    let run = state.run()?;
    let spectrum = run
        .spectrum
        .as_ref()
        .ok_or_else(|| ServiceError::NotFound("this run has no spectrum; run `wavecomm spectrum` first".into()))?;
    Ok(Json(spectrum).into_response())
}

async fn get_labels(State(state): State<SharedState>) -> Result<Response, ServiceError> {
    let store = state.labels()?.lock().await;
    Ok(Json(store.state()).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub cluster_id: Option<usize>,
    pub image_id: Option<String>,
    pub label: String,
    pub actor: Option<String>,
    /// Rejects the write with 409 if the store has moved past this revision.
    pub if_revision: Option<u64>,
}

async fn post_labels(State(state): State<SharedState>, body: axum::body::Bytes) -> Result<Response, ServiceError> {
    let req: LabelRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::Unprocessable(format!("invalid body: {e}")))?;
    let label = req.label.trim().to_string();
    if label.is_empty() {
        return Err(ServiceError::Unprocessable("label must be non-empty".into()));
    }
    let run = state.run()?;
    let action = match (req.cluster_id, req.image_id) {
        (Some(c), None) => {
            if !run.communities.clusters.iter().any(|k| k.id == c) {
                return Err(ServiceError::NotFound(format!("no cluster {c}")));
            }
            Action::LabelCluster { cluster_id: c, label }
        }
        (None, Some(i)) => {
            if run.cluster_of(&i).is_none() {
                return Err(ServiceError::NotFound(format!("no image {i:?}")));
            }
            Action::LabelImage { image_id: i, label }
        }
        _ => {
            return Err(ServiceError::Unprocessable(
                "give exactly one of cluster_id and image_id".into(),
            ))
        }
    };
    let mut store = state.labels()?.lock().await;
    if let Some(expected) = req.if_revision {
        let current = store.state().revision;
        if expected != current {
            return Err(ServiceError::Conflict(format!(
                "labels changed since revision {expected} (now {current}); reload and retry"
            )));
        }
    }
    let actor = req.actor.unwrap_or_else(|| "reviewer".into());
    let updated = store.record(&actor, action)?;
    let (counts, unlabeled) = updated.label_counts(&run.communities);
    Ok(Json(json!({
        "revision": updated.revision,
        "counts": counts,
        "unlabeled": unlabeled,
    }))
    .into_response())
}

/// `id,path,label` for every image in dataset order.
pub fn export_csv(run: &RunData, labels: &LabelState) -> Result<Vec<u8>, ServiceError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| ServiceError::Internal(e.to_string());
    w.write_record(["id", "path", "label"]).map_err(err)?;
    for (id, label) in labels.effective_labels(&run.communities) {
        let path = run
            .paths
            .get(id)
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        w.write_record([id, path.as_str(), label.unwrap_or("")]).map_err(err)?;
    }
    w.into_inner().map_err(|e| ServiceError::Internal(e.to_string()))
}

async fn get_export(State(state): State<SharedState>) -> Result<Response, ServiceError> {
    let run = state.run()?;
    let store = state.labels()?.lock().await;
    let bytes = export_csv(run, store.state())?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"labels.csv\""),
        ],
        bytes,
    )
        .into_response())
}

/// Binds and serves until Ctrl-C.
pub async fn serve(run_dir: &Path, addr: SocketAddr, config: ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::open(run_dir, config)?;
    if state.run.is_none() {
        log::warn!(
            "{} has no communities.json; run routes will answer 404",
            run_dir.display()
        );
    }
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Internal(format!("cannot bind {addr}: {e}")))?;
    info!("serving {} on http://{addr}", run_dir.display());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
