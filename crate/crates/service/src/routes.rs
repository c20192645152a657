use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use seedgrow::engine::{classify_negative_with, PromptSummary, StepRecord};
use seedgrow::io::{decode_volume, encode_mask, memory_origin, read_mask, read_volume};
use seedgrow::{Mask, VoxelIndex};

use crate::error::{ApiError, ApiResult};
use crate::render::{encode_png, overlay_rle, slice_gray, Axis};
use crate::state::{AppState, SessionEntry, VolumeEntry};

const MAX_UPLOAD_BYTES: usize = 512 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    let static_dir = state.config().static_dir.clone();
    let api = Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/volumes", get(list_volumes).post(upload_volume))
        .route("/volumes/{id}", get(get_volume))
        .route("/volumes/{id}/slice", get(slice))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/prompt", post(prompt))
        .route("/sessions/{id}/refine", post(refine))
        .route("/sessions/{id}/reset-prompt", post(reset_prompt))
        .route("/sessions/{id}/mask", get(mask))
        .route("/sessions/{id}/overlay", get(overlay))
        .route("/sessions/{id}/classification", get(classification))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state);
    let app = Router::new().nest("/api/v1", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")).field("body"))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()).field("query"))
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> ApiResult<R> + Send + 'static) -> ApiResult<R> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn models(State(st): State<AppState>) -> Json<Value> {
    let policies: Vec<Value> = st
        .policies()
        .iter()
        .map(|(id, p)| json!({"id": id, "arch": p.arch, "meta": p.meta}))
        .collect();
    Json(json!({"surrogates": st.surrogate_ids(), "policies": policies}))
}

async fn list_volumes(State(st): State<AppState>) -> Json<Value> {
    Json(json!({ "volumes": st.volumes() }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeRef {
    path: PathBuf,
    truth_path: Option<PathBuf>,
}

/// SVF bytes (`application/octet-stream`) or `{path, truth_path?}` JSON.
async fn upload_volume(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let entry = if is_json {
        let r: VolumeRef = parse_json(&body)?;
        blocking(move || {
            Ok(VolumeEntry {
                volume: read_volume(&r.path)?.into(),
                truth: r.truth_path.as_ref().map(read_mask).transpose()?.map(Into::into),
                source: Some(r.path),
            })
        })
        .await?
    } else {
        VolumeEntry {
            volume: decode_volume(&body, &memory_origin())?.into(),
            truth: None,
            source: None,
        }
    };
    let info = st.add_volume(entry)?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn get_volume(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(serde_json::to_value(st.volume(&id)?.info(&id)).expect("info serialises")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SliceQuery {
    #[serde(default = "default_axis")]
    axis: Axis,
    index: usize,
    #[serde(default)]
    channel: usize,
    #[serde(default)]
    lo: Option<f64>,
    #[serde(default)]
    hi: Option<f64>,
}

fn default_axis() -> Axis {
    Axis::A
}

fn check_index(axis: Axis, index: usize, dims: seedgrow::Dims) -> ApiResult<()> {
    let n = axis.extent(dims);
    if index >= n {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "out_of_range",
            format!("slice {index} outside 0..{n} on axis {axis:?}"),
        )
        .field("index"));
    }
    Ok(())
}

async fn slice(State(st): State<AppState>, Path(id): Path<String>, q: Result<Query<SliceQuery>, QueryRejection>) -> ApiResult<Response> {
    let q = query(q)?;
    let vol = st.volume(&id)?.volume;
    check_index(q.axis, q.index, vol.dims())?;
    if q.channel >= vol.channels() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "out_of_range",
            format!("channel {} outside 0..{}", q.channel, vol.channels()),
        )
        .field("channel"));
    }
    let window = (q.lo.unwrap_or(0.0), q.hi.unwrap_or(1.0));
    let (h, w) = q.axis.plane(vol.dims());
    let gray = slice_gray(&vol, q.axis, q.index, q.channel, window);
    Ok(([(header::CONTENT_TYPE, "image/png")], encode_png(&gray, w, h)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    volume_id: String,
    #[serde(default)]
    policy_id: Option<String>,
    surrogate_id: String,
}

#[derive(Debug, Serialize)]
struct SessionView {
    id: String,
    volume_id: String,
    policy_id: Option<String>,
    surrogate_id: String,
    prompt: Option<PromptSummary>,
    history: Vec<StepRecord>,
    voxels: usize,
    terminal: bool,
    negative_threshold: usize,
}

async fn view(st: &AppState, id: &str, e: &SessionEntry) -> SessionView {
    let s = e.session.lock().await;
    SessionView {
        id: id.to_string(),
        volume_id: e.volume_id.clone(),
        policy_id: e.policy_id.clone(),
        surrogate_id: e.surrogate_id.clone(),
        prompt: s.prompt_summary().cloned(),
        history: s.history().to_vec(),
        voxels: s.mask().map_or(0, Mask::count),
        terminal: s.is_terminal(),
        negative_threshold: st.config().negative_threshold,
    }
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse_json(&body)?;
    let st2 = st.clone();
    let id = blocking(move || st2.create_session(&req.volume_id, req.policy_id.as_deref(), &req.surrogate_id)).await?;
    let e = st.session(&id)?;
    Ok((StatusCode::CREATED, Json(view(&st, &id, &e).await)).into_response())
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let e = st.session(&id)?;
    Ok(Json(view(&st, &id, &e).await))
}

async fn delete_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    st.remove_session(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

fn try_lock(e: &SessionEntry) -> ApiResult<tokio::sync::OwnedMutexGuard<seedgrow::engine::InferenceSession<f64>>> {
    e.session.clone().try_lock_owned().map_err(|_| ApiError::busy())
}

async fn prompt(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<PromptSummary>> {
    let seed: VoxelIndex = parse_json(&body)?;
    let mut guard = try_lock(&st.session(&id)?)?;
    let summary = blocking(move || Ok(guard.prompt(seed)?)).await?;
    Ok(Json(summary))
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Auto {
    Auto,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Steps {
    Count(usize),
    Auto(Auto),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineRequest {
    steps: Steps,
}

#[derive(Debug, Serialize)]
struct RefineResponse {
    steps: Vec<StepRecord>,
    voxels: usize,
    terminal: bool,
    dice: Option<f64>,
}

async fn refine(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<RefineResponse>> {
    let steps = if body.iter().all(u8::is_ascii_whitespace) {
        Steps::Auto(Auto::Auto)
    } else {
        parse_json::<RefineRequest>(&body)?.steps
    };
    let max = match steps {
        Steps::Count(0) => return Err(ApiError::bad_request("steps must be >= 1 or \"auto\"").field("steps")),
        Steps::Count(n) => Some(n),
        Steps::Auto(_) => None,
    };
    let mut guard = try_lock(&st.session(&id)?)?;
    let resp = blocking(move || {
        let steps = guard.refine(max)?;
        let dice = steps.last().and_then(|s| s.dice).or(guard.prompt_summary().and_then(|p| p.dice));
        Ok(RefineResponse {
            voxels: guard.mask().map_or(0, Mask::count),
            terminal: guard.is_terminal(),
            dice,
            steps,
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn reset_prompt(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let e = st.session(&id)?;
    try_lock(&e)?.reset_prompt();
    Ok(Json(view(&st, &id, &e).await))
}

/// Current mask, or an empty one before the first prompt.
async fn current_mask(e: &SessionEntry) -> (Mask, [f64; 3]) {
    let s = e.session.lock().await;
    let vol = s.env().volume();
    let m = s.mask().cloned().unwrap_or_else(|| Mask::empty(vol.dims()));
    (m, vol.spacing_mm())
}

async fn mask(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (m, spacing) = current_mask(&st.session(&id)?).await;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], encode_mask(&m, spacing)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverlayQuery {
    #[serde(default = "default_axis")]
    axis: Axis,
    index: usize,
}

async fn overlay(
    State(st): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<OverlayQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let (m, _) = current_mask(&st.session(&id)?).await;
    check_index(q.axis, q.index, m.dims())?;
    let (h, w) = q.axis.plane(m.dims());
    Ok(Json(json!({
        "axis": q.axis,
        "index": q.index,
        "height": h,
        "width": w,
        "rows": overlay_rle(&m, q.axis, q.index),
    })))
}

async fn classification(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let e = st.session(&id)?;
    let s = e.session.lock().await;
    let Some(m) = s.mask() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "no_prompt", "place a prompt first"));
    };
    let threshold = st.config().negative_threshold;
    let negative = classify_negative_with(m, threshold);
    Ok(Json(json!({
        "classification": if negative { "negative" } else { "positive" },
        "voxels": m.count(),
        "threshold": threshold,
        "terminal": s.is_terminal(),
    })))
}
