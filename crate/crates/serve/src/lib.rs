//! HTTP service for interactive few-shot generation.
//!
//! | method | path                          | body / query                         |
//! |--------|-------------------------------|--------------------------------------|
//! | GET    | `/models`                     |                                      |
//! | POST   | `/sessions`                   | `{"model": id}` (optional)           |
//! | GET    | `/sessions/{id}`              |                                      |
//! | POST   | `/sessions/{id}/seeds`        | `{"images": [base64 PNG or JPEG]}`   |
//! | POST   | `/sessions/{id}/interpolate`  | `{"seed_a", "seed_b", "alpha"}`      |
//! | GET    | `/sessions/{id}/grid`         | `?cols=n` (optional)                 |
//!
//! Images travel as base64 PNG. Errors are `{"code", "message"}` with a
//! matching HTTP status. `alpha` weights `seed_a`: 1 reproduces it, 0
//! reproduces `seed_b`.

mod error;
mod state;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use augint::datasets::{ImageBatch, ImageShape};
use augint::grid::{decode_image, encode_png, tile};
use augint::sampler::decode_mixtures;
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tch::Tensor;

pub use error::{ApiError, ErrorBody};
pub use state::{AppState, LoadedModel, ModelEntry, ServeConfig, ServeError, Session};

type Shared = Arc<AppState>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelList {
    pub models: Vec<ModelEntry>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    model: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedInfo {
    pub id: String,
    /// Base64 PNG of the seed after preprocessing to model resolution.
    pub thumbnail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub model: String,
    pub created_unix: u64,
    pub seeds: Vec<SeedInfo>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UploadSeeds {
    images: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadResponse {
    pub seeds: Vec<SeedInfo>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpolateRequest {
    seed_a: String,
    seed_b: String,
    alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub model: String,
    pub seed_a: String,
    pub seed_b: String,
    pub alpha: f64,
    pub image: String,
}

#[derive(Debug, Deserialize)]
struct GridQuery {
    cols: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridFrame {
    pub seed_a: String,
    pub seed_b: String,
    pub image: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridResponse {
    pub model: String,
    pub alpha: f64,
    pub cols: usize,
    /// All frames tiled row-major in `frames` order.
    pub grid: String,
    pub frames: Vec<GridFrame>,
}

/// Builds the router over loaded state.
pub fn router(state: AppState) -> Router {
    build(Arc::new(state))
}

fn build(shared: Shared) -> Router {
    let limit = shared.config.max_body_bytes;
    Router::new()
        .route("/models", get(list_models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/seeds", post(upload_seeds))
        .route("/sessions/{id}/interpolate", post(interpolate))
        .route("/sessions/{id}/grid", get(midpoint_grid))
        .layer(middleware::from_fn_with_state(shared.clone(), require_token))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(shared)
}

/// Serves until the process is stopped, expiring idle sessions in the
/// background.
pub async fn run(state: AppState, addr: SocketAddr) -> Result<(), ServeError> {
    let idle = state.config.session_idle;
    let shared: Shared = Arc::new(state);
    let sweeper = shared.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(idle.clamp(Duration::from_secs(1), Duration::from_secs(60)));
        loop {
            tick.tick().await;
            let n = sweeper.expire_idle();
            if n > 0 {
                tracing::info!(expired = n, "expired idle sessions");
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, build(shared)).await?;
    Ok(())
}

async fn require_token(State(state): State<Shared>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = &state.config.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            return Err(ApiError::Unauthorized);
        }
    }
    Ok(next.run(req).await)
}

fn body_bytes(body: Result<Bytes, BytesRejection>, limit: usize) -> Result<Bytes, ApiError> {
    body.map_err(|r| {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::PayloadTooLarge(limit)
        } else {
            ApiError::Validation(r.body_text())
        }
    })
}

fn parse_body<T: DeserializeOwned>(body: Result<Bytes, BytesRejection>, limit: usize) -> Result<T, ApiError> {
    parse_json(&body_bytes(body, limit)?)
}

fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::Validation(format!("malformed request body: {e}")))
}

/// Runs model inference off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("inference task failed: {e}")))?
}

fn lock(session: &Mutex<Session>) -> std::sync::MutexGuard<'_, Session> {
    session.lock().unwrap_or_else(|p| p.into_inner())
}

fn png_b64(img: &augint::datasets::Image) -> Result<String, ApiError> {
    Ok(B64.encode(encode_png(img)?))
}

fn session_info(s: &Session) -> Result<SessionInfo, ApiError> {
    Ok(SessionInfo {
        id: s.id.clone(),
        model: s.model.entry.id.clone(),
        created_unix: s.created_unix,
        seeds: s
            .seeds
            .iter()
            .map(|seed| {
                Ok(SeedInfo {
                    id: seed.id.clone(),
                    thumbnail: png_b64(&seed.image)?,
                })
            })
            .collect::<Result<_, ApiError>>()?,
    })
}

async fn list_models(State(state): State<Shared>) -> Json<ModelList> {
    Json(ModelList { models: state.catalog() })
}

async fn create_session(
    State(state): State<Shared>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let bytes = body_bytes(body, state.config.max_body_bytes)?;
    let req: CreateSession = if bytes.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        parse_json(&bytes)?
    };
    let model = state.model(req.model.as_deref())?;
    let session = state.create_session(model, uuid::Uuid::new_v4().simple().to_string());
    let info = session_info(&lock(&session))?;
    tracing::info!(session = %info.id, model = %info.model, "session created");
    Ok((StatusCode::CREATED, Json(info)))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    let session = state.session(&id)?;
    let info = session_info(&lock(&session))?;
    Ok(Json(info))
}

fn decode_upload(b64: &str, shape: ImageShape, index: usize) -> Result<augint::datasets::Image, ApiError> {
    let bytes = B64
        .decode(b64.trim())
        .map_err(|e| ApiError::Validation(format!("images[{index}] is not valid base64: {e}")))?;
    decode_image(&bytes, shape).map_err(|e| match e {
        augint::Error::Shape(msg) => ApiError::UnsupportedImage(format!("images[{index}]: {msg}")),
        other => ApiError::Validation(format!("images[{index}] could not be decoded: {other}")),
    })
}

async fn upload_seeds(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<UploadResponse>), ApiError> {
    let session = state.session(&id)?;
    let req: UploadSeeds = parse_body(body, state.config.max_body_bytes)?;
    if req.images.is_empty() {
        return Err(ApiError::Validation("`images` must hold at least one image".into()));
    }
    let max = state.config.max_seeds;
    let seeds = blocking(move || {
        let mut s = lock(&session);
        if s.seeds.len() + req.images.len() > max {
            return Err(ApiError::Validation(format!(
                "a session holds at most {max} seeds ({} already uploaded)",
                s.seeds.len()
            )));
        }
        let model = s.model.clone();
        let bundle = model.bundle();
        let shape = bundle.image_shape();
        let images = req
            .images
            .iter()
            .enumerate()
            .map(|(i, b64)| decode_upload(b64, shape, i))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::with_capacity(images.len());
        for image in images {
            // One image per call so a seed's code never depends on its batch mates.
            let batch = ImageBatch::from_images(shape, std::slice::from_ref(&image), None)?;
            let code: Vec<f32> = Vec::try_from(bundle.encode(&batch)?.view([-1])).map_err(augint::Error::from)?;
            let id = s.next_seed_id();
            out.push(SeedInfo {
                id: id.clone(),
                thumbnail: png_b64(&image)?,
            });
            s.seeds.push(state::Seed { id, image, code });
        }
        Ok(out)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(UploadResponse { seeds })))
}

fn codes_tensor(codes: &[&[f32]]) -> Tensor {
    let dim = codes.first().map_or(0, |c| c.len()) as i64;
    let flat: Vec<f32> = codes.iter().flat_map(|c| c.iter().copied()).collect();
    Tensor::from_slice(&flat).view([codes.len() as i64, dim])
}

async fn interpolate(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<InterpolateResponse>, ApiError> {
    let session = state.session(&id)?;
    let req: InterpolateRequest = parse_body(body, state.config.max_body_bytes)?;
    if !(0.0..=1.0).contains(&req.alpha) {
        return Err(ApiError::Validation(format!("alpha must lie in [0, 1], got {}", req.alpha)));
    }
    let resp = blocking(move || {
        let s = lock(&session);
        let (a, b) = (s.seed(&req.seed_a)?, s.seed(&req.seed_b)?);
        let codes = codes_tensor(&[&a.code, &b.code]);
        let out = decode_mixtures(&s.model.bundle(), &codes, &[0], &[1], &[req.alpha])?;
        Ok(InterpolateResponse {
            model: s.model.entry.id.clone(),
            seed_a: req.seed_a,
            seed_b: req.seed_b,
            alpha: req.alpha,
            image: png_b64(&out.image(0))?,
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn midpoint_grid(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<GridQuery>,
) -> Result<Json<GridResponse>, ApiError> {
    let session = state.session(&id)?;
    if q.cols == Some(0) {
        return Err(ApiError::Validation("cols must be positive".into()));
    }
    let resp = blocking(move || {
        let s = lock(&session);
        let n = s.seeds.len();
        if n < 2 {
            return Err(ApiError::Validation(format!("a midpoint grid needs at least 2 seeds, session has {n}")));
        }
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let codes: Vec<&[f32]> = s.seeds.iter().map(|seed| seed.code.as_slice()).collect();
        let (left, right): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let alpha = vec![0.5; pairs.len()];
        let batch = decode_mixtures(&s.model.bundle(), &codes_tensor(&codes), &left, &right, &alpha)?;
        let cols = q.cols.unwrap_or_else(|| (pairs.len() as f64).sqrt().ceil() as usize);
        let frames = pairs
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                Ok(GridFrame {
                    seed_a: s.seeds[i].id.clone(),
                    seed_b: s.seeds[j].id.clone(),
                    image: png_b64(&batch.image(k))?,
                })
            })
            .collect::<Result<Vec<_>, ApiError>>()?;
        Ok(GridResponse {
            model: s.model.entry.id.clone(),
            alpha: 0.5,
            cols: cols.min(pairs.len()),
            grid: png_b64(&tile(&batch, cols, 2)?)?,
            frames,
        })
    })
    .await?;
    Ok(Json(resp))
}
