//! HTTP routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use jiff::Timestamp;
use serde_json::{json, Value};
use simra_core::pipeline::PipelineConfig;
use simra_core::privacy::CropSpec;
use simra_core::scoring::hotspots_geojson;
use simra_core::ParseError;

use crate::filter::{incident_stats, incidents_geojson, rides_geojson, Filter};
use crate::key::verify_key;
use crate::store::{RegionStore, Store, StoreError};

pub const ACCESS_KEY_HEADER: &str = "x-access-key";
const MAX_UPLOAD_BYTES: usize = 64 << 20;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub salt: Arc<str>,
    pub pipeline: Arc<PipelineConfig>,
}

pub struct ApiError(StatusCode, Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl ApiError {
    fn new(status: StatusCode, msg: impl ToString) -> Self {
        ApiError(status, json!({ "error": msg.to_string() }))
    }
}

fn diagnostics(e: &ParseError) -> Value {
    match e {
        ParseError::Format { line, message } => json!([{ "line": line, "message": message }]),
        ParseError::Invalid { line, source } => json!([{ "line": line, "message": source.to_string() }]),
        ParseError::Validation(v) => json!([{ "message": v.to_string() }]),
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::UnknownRegion(_) => ApiError::new(StatusCode::NOT_FOUND, msg),
            StoreError::Parse(p) => {
                ApiError(StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": msg, "diagnostics": diagnostics(&p) }))
            }
            StoreError::Rejected(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, msg),
            StoreError::Duplicate(id) => ApiError(StatusCode::CONFLICT, json!({ "error": msg, "existing": id })),
            StoreError::NoMapExtract(_) => ApiError::new(StatusCode::CONFLICT, msg),
            StoreError::Analysis(_) | StoreError::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, msg),
        }
    }
}

type ApiResult = Result<Response, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/api/regions", get(list_regions))
        .route("/api/{region}/rides", post(post_ride).get(get_rides))
        .route("/api/{region}/profiles", post(post_profile))
        .route("/api/{region}/incidents", get(get_incidents))
        .route("/api/{region}/stats", get(get_stats))
        .route("/api/{region}/hotspots", get(get_hotspots))
        .route("/api/{region}/graph", get(get_graph))
        .route("/api/{region}/analysis", post(post_analysis))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

fn authorize(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let key = headers.get(ACCESS_KEY_HEADER).and_then(|v| v.to_str().ok()).unwrap_or_default();
    if verify_key(key, Timestamp::now(), &state.salt) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::UNAUTHORIZED, "missing, invalid or expired access key"))
    }
}

fn region<'a>(state: &'a AppState, name: &str) -> Result<&'a RegionStore, ApiError> {
    Ok(state.store.region(name)?)
}

fn bad_request(msg: impl ToString) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, msg)
}

/// Optional crop bounds on upload: `start_s`, `start_m`, `end_s`, `end_m`.
fn crop_params(pairs: &[(String, String)]) -> Result<Option<CropSpec>, ApiError> {
    let mut spec = CropSpec::default();
    for (k, v) in pairs {
        let slot = match k.as_str() {
            "start_s" => &mut spec.start_time_s,
            "start_m" => &mut spec.start_distance_m,
            "end_s" => &mut spec.end_time_s,
            "end_m" => &mut spec.end_distance_m,
            _ => return Err(bad_request(format!("unknown parameter {k:?}; accepted: start_s, start_m, end_s, end_m"))),
        };
        *slot = Some(v.parse().map_err(|_| bad_request(format!("bad value {v:?} for {k}")))?);
    }
    if pairs.is_empty() {
        return Ok(None);
    }
    spec.validate().map_err(bad_request)?;
    Ok(Some(spec))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StoreError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?
        .map_err(ApiError::from)
}

async fn list_regions(State(state): State<AppState>) -> Json<Value> {
    let regions: Vec<Value> = state
        .store
        .regions()
        .map(|r| {
            json!({
                "region": r.name(),
                "timezone": r.settings().timezone,
                "rides": r.ride_count(),
                "profiles": r.profile_count(),
                "snapshot": r.snapshot().map(|s| s.version),
            })
        })
        .collect();
    Json(json!(regions))
}

async fn post_ride(
    State(state): State<AppState>,
    Path(name): Path<String>,
    Query(params): Query<Vec<(String, String)>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    authorize(&state, &headers)?;
    region(&state, &name)?;
    let crop = crop_params(&params)?;
    let store = state.store.clone();
    let id = blocking(move || store.region(&name)?.ingest_ride(&body, crop.as_ref())).await?;
    Ok(Json(json!({ "ride_id": id.to_string() })).into_response())
}

async fn post_profile(State(state): State<AppState>, Path(name): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    authorize(&state, &headers)?;
    region(&state, &name)?;
    let store = state.store.clone();
    let id = blocking(move || store.region(&name)?.ingest_profile(&body)).await?;
    Ok(Json(json!({ "profile_id": id })).into_response())
}

async fn get_rides(State(state): State<AppState>, Path(name): Path<String>, Query(q): Query<Vec<(String, String)>>) -> ApiResult {
    let r = region(&state, &name)?;
    let filter = Filter::parse(&q).map_err(bad_request)?;
    Ok(Json(rides_geojson(&r.rides(), &filter)).into_response())
}

async fn get_incidents(
    State(state): State<AppState>,
    Path(name): Path<String>,
    Query(q): Query<Vec<(String, String)>>,
) -> ApiResult {
    let r = region(&state, &name)?;
    let filter = Filter::parse(&q).map_err(bad_request)?;
    Ok(Json(incidents_geojson(&r.rides(), &filter)).into_response())
}

async fn get_stats(State(state): State<AppState>, Path(name): Path<String>, Query(q): Query<Vec<(String, String)>>) -> ApiResult {
    let r = region(&state, &name)?;
    let filter = Filter::parse(&q).map_err(bad_request)?;
    Ok(Json(incident_stats(&r.rides(), &filter)).into_response())
}

fn no_snapshot(name: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, format!("no analysis snapshot for {name} yet"))
}

async fn get_hotspots(
    State(state): State<AppState>,
    Path(name): Path<String>,
    Query(q): Query<Vec<(String, String)>>,
) -> ApiResult {
    let r = region(&state, &name)?;
    let geojson = match &q[..] {
        [] => false,
        [(k, v)] if k == "format" && v == "geojson" => true,
        [(k, v)] if k == "format" && v == "json" => false,
        _ => return Err(bad_request("only format=json|geojson is accepted")),
    };
    let snap = r.snapshot().ok_or_else(|| no_snapshot(&name))?;
    if geojson {
        return Ok(Json(hotspots_geojson(&snap.report)).into_response());
    }
    Ok(Json(json!({ "version": snap.version, "rides": snap.rides, "report": snap.report })).into_response())
}

async fn get_graph(State(state): State<AppState>, Path(name): Path<String>) -> ApiResult {
    let r = region(&state, &name)?;
    let snap = r.snapshot().ok_or_else(|| no_snapshot(&name))?;
    Ok(Json(snap.graph.to_geojson()).into_response())
}

async fn post_analysis(State(state): State<AppState>, Path(name): Path<String>, headers: HeaderMap) -> ApiResult {
    authorize(&state, &headers)?;
    region(&state, &name)?;
    let (store, pipeline) = (state.store.clone(), state.pipeline.clone());
    let snap = blocking(move || store.region(&name)?.run_analysis(&pipeline)).await?;
    Ok(Json(json!({
        "version": snap.version,
        "rides": snap.rides,
        "hotspots": snap.report.hotspots.len(),
        "unscored": snap.report.unscored.len(),
    }))
    .into_response())
}
