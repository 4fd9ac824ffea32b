//! Synchronous JSON service over the shared job layer.

use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use idinv::editing::Rect;
use idinv::inversion::InversionConfig;
use idinv::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::jobs::{self, JobOutput, JobResponse, Loaded};

pub const DEFAULT_STEP_CAP: usize = 200;

#[derive(Clone)]
pub struct AppState {
    current: Arc<RwLock<Arc<Loaded>>>,
    pub step_cap: usize,
}

impl AppState {
    pub fn new(loaded: Loaded, step_cap: usize) -> Self {
        AppState { current: Arc::new(RwLock::new(Arc::new(loaded))), step_cap }
    }

    pub fn snapshot(&self) -> Arc<Loaded> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Loads outside the lock, then swaps; new requests wait only for the swap.
    pub fn reload(&self, path: &Path) -> idinv::Result<()> {
        let fresh = Arc::new(Loaded::open(path)?);
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = fresh;
        Ok(())
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Core(Error),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_tail: Option<Vec<f64>>,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Decode { .. } | Error::Json(_) => StatusCode::BAD_REQUEST,
                Error::NotFound(_) => StatusCode::NOT_FOUND,
                Error::DegenerateMask => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        let body = match self {
            ApiError::BadRequest(m) => ErrorBody { error: m, trace_tail: None },
            ApiError::Core(Error::InversionFailure { step, reason, trace_tail }) => ErrorBody {
                error: format!("inversion failed at step {step}: {reason}"),
                trace_tail: Some(trace_tail),
            },
            ApiError::Core(e) => ErrorBody { error: e.to_string(), trace_tail: None },
        };
        (status, Json(body)).into_response()
    }
}

/// Strict JSON parsing; every schema violation is a 400.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request: {e}")))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertRequest {
    pub image: String,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub image: String,
    pub attribute: String,
    pub alpha: f64,
    #[serde(default)]
    pub layers: Option<[usize; 2]>,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateRequest {
    pub image_a: String,
    pub image_b: String,
    /// 0 gives `image_a`'s inversion, 1 gives `image_b`'s.
    pub t: f64,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixRequest {
    pub content: String,
    pub style: String,
    #[serde(default)]
    pub layers: Option<[usize; 2]>,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffuseRequest {
    pub target: String,
    pub context: String,
    pub crop: Rect,
    #[serde(default)]
    pub paste: Option<[usize; 2]>,
    #[serde(default)]
    pub feather: usize,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    checkpoint: String,
    resolution: usize,
    layers: usize,
    latent_dim: usize,
    step_cap: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/boundaries", get(boundaries))
        .route("/invert", post(invert))
        .route("/edit", post(edit))
        .route("/interpolate", post(interpolate))
        .route("/mix", post(mix))
        .route("/diffuse", post(diffuse))
        .with_state(state)
}

async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    let l = s.snapshot();
    Json(serde_json::to_value(Health {
        status: "ok",
        checkpoint: l.id.clone(),
        resolution: l.generator.config().resolution,
        layers: l.generator.num_layers(),
        latent_dim: l.generator.latent_dim(),
        step_cap: s.step_cap,
    })
    .unwrap_or_default())
}

async fn boundaries(State(s): State<AppState>) -> Json<Vec<idinv::evaluation::SemanticBoundary>> {
    Json(s.snapshot().boundaries.clone())
}

fn resolve(s: &AppState, requested: &Option<String>, cfg: &InversionConfig) -> Result<(Arc<Loaded>, InversionConfig), ApiError> {
    let l = s.snapshot();
    if let Some(id) = requested {
        if *id != l.id {
            return Err(Error::NotFound(format!("checkpoint {id:?} is not loaded")).into());
        }
    }
    let mut cfg = cfg.clone();
    cfg.steps = cfg.steps.min(s.step_cap);
    Ok((l, cfg))
}

/// Runs the CPU-bound job off the async executor.
async fn run<F>(operation: &'static str, l: Arc<Loaded>, job: F) -> Result<Json<JobResponse>, ApiError>
where
    F: FnOnce(&Loaded) -> idinv::Result<JobOutput> + Send + 'static,
{
    let started = Instant::now();
    let result = tokio::task::spawn_blocking(move || {
        let out = job(&l)?;
        out.into_response(operation, &l.id, started)
    })
    .await
    .map_err(|e| ApiError::Core(Error::InvalidArgument(format!("worker failed: {e}"))))?;
    Ok(Json(result?))
}

async fn invert(State(s): State<AppState>, body: Bytes) -> Result<Json<JobResponse>, ApiError> {
    let req: InvertRequest = parse(&body)?;
    let (l, cfg) = resolve(&s, &req.checkpoint, &req.inversion)?;
    let x = jobs::decode_png("image", &req.image)?;
    run("invert", l, move |l| jobs::run_invert(l, &x, &cfg)).await
}

async fn edit(State(s): State<AppState>, body: Bytes) -> Result<Json<JobResponse>, ApiError> {
    let req: EditRequest = parse(&body)?;
    let (l, cfg) = resolve(&s, &req.checkpoint, &req.inversion)?;
    l.boundary(&req.attribute)?;
    let x = jobs::decode_png("image", &req.image)?;
    run("edit", l, move |l| jobs::run_edit(l, &x, &req.attribute, req.alpha, req.layers, &cfg)).await
}

async fn interpolate(State(s): State<AppState>, body: Bytes) -> Result<Json<JobResponse>, ApiError> {
    let req: InterpolateRequest = parse(&body)?;
    let (l, cfg) = resolve(&s, &req.checkpoint, &req.inversion)?;
    let a = jobs::decode_png("image_a", &req.image_a)?;
    let b = jobs::decode_png("image_b", &req.image_b)?;
    run("interpolate", l, move |l| jobs::run_interpolate(l, &a, &b, req.t, &cfg)).await
}

async fn mix(State(s): State<AppState>, body: Bytes) -> Result<Json<JobResponse>, ApiError> {
    let req: MixRequest = parse(&body)?;
    let (l, cfg) = resolve(&s, &req.checkpoint, &req.inversion)?;
    let content = jobs::decode_png("content", &req.content)?;
    let style = jobs::decode_png("style", &req.style)?;
    run("mix", l, move |l| jobs::run_mix(l, &content, &style, req.layers, &cfg)).await
}

async fn diffuse(State(s): State<AppState>, body: Bytes) -> Result<Json<JobResponse>, ApiError> {
    let req: DiffuseRequest = parse(&body)?;
    let (l, cfg) = resolve(&s, &req.checkpoint, &req.inversion)?;
    let target = jobs::decode_png("target", &req.target)?;
    let context = jobs::decode_png("context", &req.context)?;
    let spec = jobs::diffusion_spec(req.crop, req.paste.map(|[t, l]| (t, l)), req.feather, cfg);
    run("diffuse", l, move |l| jobs::run_diffuse(l, &target, &context, &spec)).await
}

pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
