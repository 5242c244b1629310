//! JSON routes over a swappable [`Engine`].
//!
//! Every body is `{"checksum": <snapshot checksum>, "data": ...}` or, on
//! failure, `{"checksum": ..., "error": {"kind": ..., "message": ...}}`.

use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use capacity_core::ingest::UnitKind;
use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, PredictRequest, SequenceRequest, WhatIfRequest};
use crate::error::{ErrorKind, ServiceError};
use crate::sequences::SequenceStore;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<RwLock<Arc<Engine>>>,
    sequences: Arc<SequenceStore>,
}

impl AppState {
    pub fn new(engine: Engine, sequences: SequenceStore) -> Self {
        AppState {
            engine: Arc::new(RwLock::new(Arc::new(engine))),
            sequences: Arc::new(sequences),
        }
    }

    /// The engine current at call time; later swaps do not affect it.
    pub fn engine(&self) -> Arc<Engine> {
        self.engine.read().expect("engine lock poisoned").clone()
    }

    /// Replace the snapshot and models for all later requests.
    pub fn swap(&self, engine: Engine) {
        *self.engine.write().expect("engine lock poisoned") = Arc::new(engine);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/units", get(units))
        .route("/api/units/{id}/clinics", get(unit_clinics))
        .route("/api/series", get(series))
        .route("/api/lens", get(lens))
        .route("/api/heatmap", get(heatmap))
        .route("/api/models/compare", get(compare))
        .route("/api/models/importance", get(importance))
        .route("/api/predict", post(predict))
        .route("/api/whatif", post(whatif))
        .route("/api/sequences", get(list_sequences).post(save_sequence))
        .fallback(not_found)
        .with_state(state)
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    checksum: &'a str,
    data: T,
}

#[derive(Serialize)]
struct ErrorEnvelope<'a> {
    checksum: &'a str,
    error: &'a ServiceError,
}

fn status_of(kind: ErrorKind) -> StatusCode {
    StatusCode::from_u16(kind.status()).expect("known status")
}

fn json_response(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [("content-type", "application/json")], body).into_response()
}

fn reply<T: Serialize>(engine: &Engine, status: StatusCode, result: Result<T, ServiceError>) -> Response {
    let checksum = engine.checksum();
    match result {
        Ok(data) => json_response(
            status,
            serde_json::to_vec(&Envelope { checksum, data }).expect("responses serialize"),
        ),
        Err(error) => fail(checksum, &error),
    }
}

fn fail(checksum: &str, error: &ServiceError) -> Response {
    json_response(
        status_of(error.kind),
        serde_json::to_vec(&ErrorEnvelope { checksum, error }).expect("errors serialize"),
    )
}

/// An extraction failure, reported in the usual error shape.
pub struct Rejected {
    checksum: String,
    error: ServiceError,
}

impl Rejected {
    fn new(state: &AppState, message: String) -> Self {
        Rejected {
            checksum: state.engine().checksum().to_string(),
            error: ServiceError::bad_request(message),
        }
    }
}

impl IntoResponse for Rejected {
    fn into_response(self) -> Response {
        fail(&self.checksum, &self.error)
    }
}

/// Query string extractor with JSON errors.
pub struct Query<T>(pub T);

impl<T: DeserializeOwned> FromRequestParts<AppState> for Query<T> {
    type Rejection = Rejected;

    async fn from_request_parts(
        parts: &mut axum::http::request::Parts,
        state: &AppState,
    ) -> Result<Self, Self::Rejection> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|q| Query(q.0))
            .map_err(|e: QueryRejection| Rejected::new(state, e.body_text()))
    }
}

/// JSON body extractor with JSON errors.
pub struct Json<T>(pub T);

impl<T: DeserializeOwned> FromRequest<AppState> for Json<T> {
    type Rejection = Rejected;

    async fn from_request(req: axum::extract::Request, state: &AppState) -> Result<Self, Self::Rejection> {
        axum::Json::<T>::from_request(req, state)
            .await
            .map(|j| Json(j.0))
            .map_err(|e: JsonRejection| Rejected::new(state, e.body_text()))
    }
}

async fn not_found(State(state): State<AppState>) -> Response {
    let engine = state.engine();
    fail(engine.checksum(), &ServiceError::not_found("no such route"))
}

fn split_list(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KindQuery {
    kind: Option<UnitKind>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesQuery {
    unit: Option<UnitKind>,
    id: String,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LensQuery {
    unit: Option<UnitKind>,
    /// Comma-separated unit ids; absent or empty sums every unit.
    units: Option<String>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
    a: Option<f64>,
    b: Option<f64>,
    #[serde(default)]
    heat: bool,
    model: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeatmapQuery {
    unit: Option<UnitKind>,
    /// Comma-separated unit ids; absent means every modelled unit.
    units: Option<String>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
    model: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelQuery {
    model: Option<String>,
}

async fn meta(State(state): State<AppState>) -> Response {
    let engine = state.engine();
    reply(&engine, StatusCode::OK, Ok(engine.meta()))
}

async fn units(State(state): State<AppState>, Query(q): Query<KindQuery>) -> Response {
    let engine = state.engine();
    reply(&engine, StatusCode::OK, engine.units(q.kind))
}

async fn unit_clinics(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<KindQuery>) -> Response {
    let engine = state.engine();
    reply(&engine, StatusCode::OK, engine.unit_clinics(q.kind, &id))
}

async fn series(State(state): State<AppState>, Query(q): Query<SeriesQuery>) -> Response {
    let engine = state.engine();
    reply(&engine, StatusCode::OK, engine.series(q.unit, &q.id, q.from, q.to))
}

async fn lens(State(state): State<AppState>, Query(q): Query<LensQuery>) -> Response {
    let engine = state.engine();
    let selection = q.units.as_deref().map(split_list).unwrap_or_default();
    let heat = q.heat.then_some(q.model.as_deref());
    let result = engine.lens(q.unit, &selection, q.from, q.to, q.a, q.b, heat);
    reply(&engine, StatusCode::OK, result)
}

async fn heatmap(State(state): State<AppState>, Query(q): Query<HeatmapQuery>) -> Response {
    let engine = state.engine();
    let units = q.units.as_deref().map(split_list);
    let result = engine.heatmap(q.unit, units.as_deref(), q.from, q.to, q.model.as_deref());
    reply(&engine, StatusCode::OK, result)
}

async fn compare(State(state): State<AppState>, Query(q): Query<KindQuery>) -> Response {
    let engine = state.engine();
    let worker = engine.clone();
    let result = tokio::task::spawn_blocking(move || worker.compare(q.kind))
        .await
        .unwrap_or_else(|e| Err(ServiceError::internal(e.to_string())));
    reply(&engine, StatusCode::OK, result)
}

async fn importance(State(state): State<AppState>, Query(q): Query<ModelQuery>) -> Response {
    let engine = state.engine();
    reply(&engine, StatusCode::OK, engine.importance(q.model.as_deref()))
}

async fn predict(State(state): State<AppState>, Json(request): Json<PredictRequest>) -> Response {
    let engine = state.engine();
    let worker = engine.clone();
    let result = tokio::task::spawn_blocking(move || worker.predict(&request))
        .await
        .unwrap_or_else(|e| Err(ServiceError::internal(e.to_string())));
    reply(&engine, StatusCode::OK, result)
}

async fn whatif(State(state): State<AppState>, Json(request): Json<WhatIfRequest>) -> Response {
    let engine = state.engine();
    let worker = engine.clone();
    let result = tokio::task::spawn_blocking(move || worker.whatif(&request))
        .await
        .unwrap_or_else(|e| Err(ServiceError::internal(e.to_string())));
    reply(&engine, StatusCode::OK, result)
}

async fn list_sequences(State(state): State<AppState>) -> Response {
    let engine = state.engine();
    reply(&engine, StatusCode::OK, Ok(state.sequences.list()))
}

async fn save_sequence(State(state): State<AppState>, Json(request): Json<SequenceRequest>) -> Response {
    let engine = state.engine();
    let result = state.sequences.append_with(|n| engine.rank(&request, n));
    reply(&engine, StatusCode::CREATED, result)
}
