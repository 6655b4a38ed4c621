//! Local HTTP service: assemble edited code, render scenes, lay out and build
//! toy cities. Scenes are immutable once registered.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use procsplat::assembly::Scene;
use procsplat::city::{building_checkpoint, city_from_layout, generate_city_layout, AssetLibrary, CityConfig, CityError, CityLayout, Point, Road};
use procsplat::grammar::{parse, serialize, GrammarError, Span};
use procsplat::splat::{Camera, CameraRecord};
use procsplat::train::code_dims;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::render_png;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Fit,
    Assemble,
    Generate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JobState {
    pub fn new(id: String, kind: JobKind) -> Self {
        Self { id, kind, status: JobStatus::Queued, progress: 0.0, artifacts: Vec::new(), error: None }
    }

    /// Moves forward along queued → running → done | failed. Finished jobs
    /// and backward moves are refused.
    pub fn advance(&mut self, to: JobStatus) -> bool {
        let ok = match (self.status, to) {
            (JobStatus::Queued, JobStatus::Running) => true,
            (JobStatus::Queued | JobStatus::Running, JobStatus::Done | JobStatus::Failed) => true,
            _ => false,
        };
        if ok {
            self.status = to;
            if to == JobStatus::Done {
                self.progress = 1.0;
            }
        }
        ok
    }
}

pub struct AppState {
    pub library: AssetLibrary,
    scenes: RwLock<HashMap<String, Arc<Scene>>>,
    jobs: Mutex<HashMap<String, JobState>>,
    next: AtomicU64,
}

impl AppState {
    pub fn new(library: AssetLibrary) -> Arc<Self> {
        Arc::new(Self { library, scenes: RwLock::default(), jobs: Mutex::default(), next: AtomicU64::new(1) })
    }

    fn id(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.next.fetch_add(1, Ordering::Relaxed))
    }

    pub fn scene(&self, id: &str) -> Option<Arc<Scene>> {
        self.scenes.read().unwrap().get(id).cloned()
    }

    fn register(&self, scene: Scene) -> String {
        let id = self.id("scene-");
        self.scenes.write().unwrap().insert(id.clone(), Arc::new(scene));
        id
    }

    fn start_job(&self, kind: JobKind) -> String {
        let mut job = JobState::new(self.id("job-"), kind);
        job.advance(JobStatus::Running);
        let id = job.id.clone();
        self.jobs.lock().unwrap().insert(id.clone(), job);
        id
    }

    fn finish_job(&self, id: &str, result: Result<&str, &str>) {
        if let Some(job) = self.jobs.lock().unwrap().get_mut(id) {
            match result {
                Ok(artifact) => {
                    job.artifacts.push(artifact.to_string());
                    job.advance(JobStatus::Done);
                }
                Err(e) => {
                    job.error = Some(e.to_string());
                    job.advance(JobStatus::Failed);
                }
            }
        }
    }
}

pub struct ApiError {
    status: StatusCode,
    message: String,
    span: Option<Span>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into(), span: None }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, message: message.into(), span: None }
    }
}

impl From<GrammarError> for ApiError {
    fn from(e: GrammarError) -> Self {
        Self { status: StatusCode::BAD_REQUEST, span: e.span(), message: e.to_string() }
    }
}

impl From<CityError> for ApiError {
    fn from(e: CityError) -> Self {
        match e {
            CityError::Grammar(g) => g.into(),
            e => Self::bad_request(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(s) = self.span {
            body["line"] = s.line.into();
            body["col"] = s.col.into();
        }
        (self.status, Json(body)).into_response()
    }
}

/// JSON bodies are decoded by hand so every malformed body is a 400 carrying
/// serde's line and column.
fn decode<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        message: format!("malformed body: {e}"),
        span: Some(Span { line: e.line(), col: e.column(), offset: 0 }),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SceneStats {
    pub gaussians: usize,
    pub instances: usize,
    pub per_asset: BTreeMap<String, usize>,
}

fn stats(scene: &Scene, library: &AssetLibrary) -> SceneStats {
    let mut per_asset = BTreeMap::new();
    let mut seen = vec![false; scene.instances.len()];
    for p in &scene.provenance {
        if !std::mem::replace(&mut seen[p.instance], true) {
            *per_asset.entry(library.bases[p.asset].spec.id.clone()).or_insert(0) += 1;
        }
    }
    SceneStats { gaussians: scene.len(), instances: per_asset.values().sum(), per_asset }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AssembleRequest {
    code: String,
    #[serde(default)]
    dims: Option<[f64; 3]>,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    scene_id: String,
    camera: CameraRecord,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutRequest {
    boundary: Vec<Point>,
    #[serde(default)]
    primary_roads: Vec<Road>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    config: Option<CityConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CityRequest {
    layout: CityLayout,
    #[serde(default)]
    seed: u64,
}

async fn assets(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], state.library.manifest.to_json())
}

async fn code(State(state): State<Arc<AppState>>, Path(building): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let code = state.library.code(&building).ok_or_else(|| ApiError::not_found(format!("no building `{building}`")))?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], serialize(code)))
}

fn assemble_blocking(state: &AppState, req: AssembleRequest) -> Result<Scene, ApiError> {
    let code = parse(&req.code)?;
    let lib = &state.library;
    // point at the first token the library cannot supply
    if let Some((id, span)) = code.asset_ids().into_iter().find(|(id, _)| lib.manifest.get(id).is_none()) {
        return Err(ApiError { status: StatusCode::BAD_REQUEST, message: format!("unknown asset `{id}`"), span: Some(span) });
    }
    let dims = match req.dims {
        Some(d) => d,
        None => code_dims(&code, &lib.manifest)?,
    };
    let ck = building_checkpoint(&code, dims, lib, req.seed)?;
    ck.scene().map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn assemble(State(state): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: AssembleRequest = decode(&body)?;
    let job = state.start_job(JobKind::Assemble);
    let st = state.clone();
    let result = tokio::task::spawn_blocking(move || assemble_blocking(&st, req)).await.expect("assemble task");
    respond_with_scene(&state, &job, result)
}

fn respond_with_scene(state: &AppState, job: &str, result: Result<Scene, ApiError>) -> Result<Json<serde_json::Value>, ApiError> {
    match result {
        Ok(scene) => {
            let stats = stats(&scene, &state.library);
            let id = state.register(scene);
            state.finish_job(job, Ok(&id));
            Ok(Json(json!({ "scene_id": id, "job_id": job, "stats": stats })))
        }
        Err(e) => {
            state.finish_job(job, Err(&e.message));
            Err(e)
        }
    }
}

async fn render(State(state): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: RenderRequest = decode(&body)?;
    let scene = state.scene(&req.scene_id).ok_or_else(|| ApiError::not_found(format!("no scene `{}`", req.scene_id)))?;
    let camera = Camera::from_record(&req.camera).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let png = tokio::task::spawn_blocking(move || render_png(&scene, &camera))
        .await
        .expect("render task")
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}

async fn layout(State(state): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: LayoutRequest = decode(&body)?;
    let input = procsplat::city::LayoutInput { boundary: req.boundary, primary_roads: req.primary_roads };
    let config = req.config.unwrap_or_default();
    let st = state.clone();
    let layout = tokio::task::spawn_blocking(move || generate_city_layout(&input, &st.library, &config, req.seed))
        .await
        .expect("layout task")?;
    Ok(Json(layout))
}

async fn city(State(state): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: CityRequest = decode(&body)?;
    let job = state.start_job(JobKind::Generate);
    let st = state.clone();
    let result = tokio::task::spawn_blocking(move || -> Result<Scene, ApiError> {
        let (_, ck) = city_from_layout(req.layout, &st.library, req.seed)?;
        ck.scene().map_err(|e| ApiError::bad_request(e.to_string()))
    })
    .await
    .expect("city task");
    respond_with_scene(&state, &job, result)
}

async fn job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let job = state.jobs.lock().unwrap().get(&id).cloned().ok_or_else(|| ApiError::not_found(format!("no job `{id}`")))?;
    Ok(Json(job))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/assets", get(assets))
        .route("/code/{building}", get(code))
        .route("/assemble", post(assemble))
        .route("/render", post(render))
        .route("/layout", post(layout))
        .route("/city", post(city))
        .route("/jobs/{id}", get(job))
        .with_state(state)
}

/// Serves on `127.0.0.1:port` until the process is stopped.
pub async fn serve(library: AssetLibrary, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(library))).await
}
