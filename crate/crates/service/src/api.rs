//! HTTP routes.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use floodstream_core::kernels::{cluster_surfaces, outlier_scores};
use floodstream_core::{AlgorithmVariant, KernelError, SurfaceId};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::state::AppState;
use crate::store::StoreError;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, body: json!({ "error": message.into() }) }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::Raster(_) | StoreError::DuplicateId(_) | StoreError::InvalidProfile(_) | StoreError::InvalidName(_) => {
                ApiError::bad_request(message)
            }
            StoreError::DimMismatch { width, height, actual_width, actual_height } => ApiError {
                status: StatusCode::CONFLICT,
                body: json!({
                    "error": message,
                    "expected": { "width": width, "height": height },
                    "actual": { "width": actual_width, "height": actual_height },
                }),
            },
            StoreError::UnknownIds(ids) => ApiError {
                status: StatusCode::NOT_FOUND,
                body: json!({ "error": message, "missing": ids }),
            },
            StoreError::NoSuchSurface(_) | StoreError::NoSuchProfile(_) => ApiError::new(StatusCode::NOT_FOUND, message),
            StoreError::ReadOnly(_) => ApiError::new(StatusCode::CONFLICT, message),
            StoreError::Corrupt(_) | StoreError::Io(_) => {
                tracing::error!("{message}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message)
            }
        }
    }
}

impl From<KernelError> for ApiError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::InvalidTau(_) => ApiError::bad_request(e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let limit = state.config().max_upload_bytes;
    Router::new()
        .route("/surfaces", post(ingest_surface).get(list_surfaces))
        .route("/surfaces/{id}", get(get_surface).delete(delete_surface))
        .route("/surfaces/{id}/raster", get(get_raster))
        .route("/workingset", get(get_working_set).put(put_working_set))
        .route("/snapshot", get(get_snapshot))
        .route("/composite.png", get(get_composite))
        .route("/histogram", get(get_histogram))
        .route("/clusters", get(get_clusters))
        .route("/outliers", get(get_outliers))
        .route("/jobs", post(submit_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/profiles", get(list_profiles))
        .route("/profiles/{name}", get(get_profile).put(put_profile))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn ingest_surface(State(state): State<AppState>, mut multipart: Multipart) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut name = None;
    let mut file = None;
    let mut file_name = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        match field.name() {
            Some("name") => name = Some(field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?),
            Some("file") => {
                file_name = field.file_name().map(str::to_string);
                file = Some(field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?);
            }
            _ => {}
        }
    }
    let file = file.ok_or_else(|| ApiError::bad_request("multipart body needs a `file` field"))?;
    let name = name.or(file_name).unwrap_or_else(|| "unnamed".into());
    let entry = state.mutate(|s| s.ingest(&name, &file)).await?;
    Ok((StatusCode::CREATED, Json(json!(entry))))
}

async fn list_surfaces(State(state): State<AppState>) -> Json<Value> {
    let store = state.store().read().await;
    let dims = store.dims().map(|(w, h)| json!({ "width": w, "height": h }));
    Json(json!({ "surfaces": store.surfaces(), "dims": dims }))
}

async fn get_surface(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let store = state.store().read().await;
    let entry = store
        .surfaces()
        .iter()
        .find(|e| e.id.as_str() == id)
        .ok_or(StoreError::NoSuchSurface(SurfaceId::new(id)))?;
    Ok(Json(json!(entry)))
}

async fn get_raster(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = state.store().read().await.payload(&SurfaceId::new(id))?;
    let kind = if bytes.starts_with(b"P5") { "image/x-portable-graymap" } else { "image/png" };
    Ok(([(header::CONTENT_TYPE, kind)], bytes).into_response())
}

async fn delete_surface(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = SurfaceId::new(id);
    let (entry, ws) = state.mutate(|s| Ok((s.delete(&id)?, s.working_set().clone()))).await?;
    Ok(Json(json!({ "deleted": entry, "working_set": ws })))
}

async fn get_working_set(State(state): State<AppState>) -> Json<Value> {
    Json(json!(state.store().read().await.working_set()))
}

#[derive(Debug, Deserialize)]
struct WorkingSetBody {
    ids: Vec<SurfaceId>,
}

async fn put_working_set(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let body: WorkingSetBody = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let ws = state.mutate(|s| s.set_working_set(body.ids)).await?;
    Ok(Json(json!(ws)))
}

#[derive(Debug, Deserialize)]
struct SnapshotQuery {
    #[serde(default)]
    min_version: u64,
    #[serde(default)]
    wait: bool,
    /// Caps the wait below the configured poll timeout.
    timeout_ms: Option<u64>,
}

async fn get_snapshot(State(state): State<AppState>, Query(q): Query<SnapshotQuery>) -> Response {
    if !q.wait {
        return Json(json!(*state.snapshot())).into_response();
    }
    let limit = state.config().poll_timeout;
    let timeout = q.timeout_ms.map_or(limit, |ms| Duration::from_millis(ms).min(limit));
    let mut rx = state.subscribe();
    let newer = match tokio::time::timeout(timeout, rx.wait_for(|s| s.version > q.min_version)).await {
        Ok(Ok(snapshot)) => Some(Arc::clone(&snapshot)),
        // Timed out, or the service is shutting down: nothing newer to report.
        _ => None,
    };
    match newer {
        Some(snapshot) => Json(json!(*snapshot)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

fn version_header(version: u64) -> (header::HeaderName, HeaderValue) {
    (header::HeaderName::from_static("x-snapshot-version"), HeaderValue::from(version))
}

async fn get_composite(State(state): State<AppState>) -> ApiResult<Response> {
    let snap = state.snapshot();
    let png = snap.composite_png.clone().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no surfaces stored"))?;
    Ok((
        [(header::CONTENT_TYPE, HeaderValue::from_static("image/png")), version_header(snap.version)],
        png.as_ref().clone(),
    )
        .into_response())
}

async fn get_histogram(State(state): State<AppState>) -> Json<Value> {
    let snap = state.snapshot();
    Json(json!({ "version": snap.version, "n_inputs": snap.n_inputs, "bins": snap.histogram }))
}

#[derive(Debug, Deserialize)]
struct ClusterQuery {
    tau: Option<f64>,
}

async fn get_clusters(State(state): State<AppState>, Query(q): Query<ClusterQuery>) -> ApiResult<Json<Value>> {
    let tau = q.tau.ok_or_else(|| ApiError::bad_request("query needs tau in (0, 1]"))?;
    let snap = state.snapshot();
    let surfaces = snap.surfaces.clone();
    let clusters = tokio::task::spawn_blocking(move || cluster_surfaces(&surfaces, tau))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(json!({ "version": snap.version, "tau": tau, "clusters": clusters })))
}

async fn get_outliers(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let snap = state.snapshot();
    if snap.surfaces.len() < 2 {
        return Ok(Json(json!({ "version": snap.version, "scores": {} })));
    }
    let surfaces = snap.surfaces.clone();
    let scores = tokio::task::spawn_blocking(move || outlier_scores(&surfaces))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(json!({ "version": snap.version, "scores": scores })))
}

#[derive(Debug, Deserialize)]
struct JobBody {
    variant: Option<String>,
    n: usize,
    profile: Option<String>,
}

async fn submit_job(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let body: JobBody = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if body.n == 0 {
        return Err(ApiError::bad_request("n must be >= 1"));
    }
    let variant = match &body.variant {
        Some(v) => v.parse::<AlgorithmVariant>().map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => state.config().variant,
    };
    let profile_name = body.profile.unwrap_or_else(|| state.config().default_profile.clone());
    let (profile, surfaces) = {
        let store = state.store().read().await;
        (store.profile(&profile_name)?, store.selected_surfaces())
    };
    if surfaces.is_empty() {
        return Err(ApiError::new(StatusCode::CONFLICT, "working set is empty"));
    }
    let record = state.submit_job(variant, body.n, profile_name, profile, surfaces);
    Ok((StatusCode::ACCEPTED, Json(json!(record))))
}

async fn list_jobs(State(state): State<AppState>) -> Json<Value> {
    Json(json!({ "jobs": state.jobs() }))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = state.job(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no job {id}")))?;
    Ok(Json(json!(job)))
}

async fn list_profiles(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    Ok(Json(json!({ "profiles": state.store().read().await.profile_names()? })))
}

async fn get_profile(State(state): State<AppState>, Path(name): Path<String>) -> ApiResult<Response> {
    let bytes = state.store().read().await.profile_json(&name)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn put_profile(State(state): State<AppState>, Path(name): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let profile = state.mutate(|s| s.put_profile(&name, &body)).await?;
    Ok(Json(json!({ "name": name, "profile": profile })))
}
