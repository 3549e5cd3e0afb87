//! JSON-over-HTTP surface: run control, aggregate views, heatmap and a live event stream.
//!
//! | method | path                           | body / response                        |
//! |--------|--------------------------------|----------------------------------------|
//! | POST   | `/api/runs`                    | `{test_kind, database_ids, repetitions?, payload_seed?}` → 202 `{run_id, session_id, trials_total}` |
//! | GET    | `/api/runs/{id}`               | `{status, trials}`                     |
//! | GET    | `/api/aggregates`              | `{cells}`                              |
//! | GET    | `/api/databases`               | `{databases: [{id, capabilities}]}`    |
//! | GET    | `/api/databases/{id}/extremes` | `{database_id, extremes}`              |
//! | GET    | `/api/heatmap`                 | `{points}`                             |
//! | GET    | `/api/tests`                   | `{tests}`                              |
//! | GET    | `/api/stream`                  | server-sent events `trial`, `run_completed` |
//!
//! Errors are `{status, code, message}` with the HTTP status mirrored in the body.

use std::convert::Infallible;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{ConnectInfo, DefaultBodyLimit, FromRequestParts, Path, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio_stream::wrappers::BroadcastStream;
use tower_http::limit::RequestBodyLimitLayer;
use tower_http::services::ServeDir;

use crate::engine::{Engine, EngineError, EngineEvent, RunSpec};
use crate::model::{test_matrix, DatabaseId, TestKind};
use crate::store::ResultStoreError;

pub const BODY_LIMIT_BYTES: usize = 50 * 1024 * 1024;
pub const SESSION_COOKIE: &str = "docbench_session";
pub const SESSION_HEADER: &str = "x-session";
pub const MAX_REPETITIONS: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(serialize_with = "status_code")]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

fn status_code<S: serde::Serializer>(s: &StatusCode, ser: S) -> Result<S::Ok, S::Error> {
    ser.serialize_u16(s.as_u16())
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(err: EngineError) -> Self {
        let message = err.to_string();
        let (status, code) = match err {
            EngineError::RunAlreadyActive(_) => (StatusCode::CONFLICT, "run_already_active"),
            EngineError::UnknownDatabase(_) => (StatusCode::NOT_FOUND, "unknown_database"),
            EngineError::UnknownRun(_) => (StatusCode::NOT_FOUND, "unknown_run"),
            EngineError::EmptySelection => (StatusCode::BAD_REQUEST, "empty_selection"),
            EngineError::DuplicateSelection(_) => (StatusCode::BAD_REQUEST, "duplicate_database"),
            EngineError::ZeroRepetitions => (StatusCode::BAD_REQUEST, "bad_request"),
            EngineError::DuplicateRegistration(_) | EngineError::Store(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "storage_failure")
            }
        };
        Self::new(status, code, message)
    }
}

impl From<ResultStoreError> for ApiError {
    fn from(err: ResultStoreError) -> Self {
        match err {
            ResultStoreError::UnknownDatabase(db) => {
                Self::new(StatusCode::NOT_FOUND, "unknown_database", format!("unknown database {db}"))
            }
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_failure", other.to_string()),
        }
    }
}

/// Caller address: first `X-Forwarded-For` entry, else the peer address, else unspecified.
pub struct ClientIp(pub IpAddr);

impl<S: Send + Sync> FromRequestParts<S> for ClientIp {
    type Rejection = Infallible;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, Self::Rejection> {
        let forwarded = parts
            .headers
            .get("x-forwarded-for")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.split(',').next())
            .and_then(|v| v.trim().parse::<IpAddr>().ok());
        let peer = parts
            .extensions
            .get::<ConnectInfo<SocketAddr>>()
            .map(|ConnectInfo(addr)| addr.ip());
        Ok(ClientIp(
            forwarded
                .or(peer)
                .unwrap_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED)),
        ))
    }
}

fn session_from(headers: &HeaderMap) -> Option<String> {
    let from_cookie = headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| pair.trim().split_once('='))
        .find(|(name, _)| *name == SESSION_COOKIE)
        .map(|(_, value)| value.to_string());
    from_cookie
        .or_else(|| {
            headers
                .get(SESSION_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .filter(|s| !s.is_empty())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRun {
    test_kind: String,
    database_ids: Vec<String>,
    repetitions: Option<u32>,
    payload_seed: Option<u64>,
}

async fn create_run(
    State(engine): State<Engine>,
    ClientIp(ip): ClientIp,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: CreateRun =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let test_kind: TestKind = req.test_kind.parse().map_err(|e: crate::model::ModelError| {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_test_kind", e.to_string())
    })?;
    if req.database_ids.is_empty() {
        return Err(EngineError::EmptySelection.into());
    }
    let repetitions = req.repetitions.unwrap_or(1);
    if repetitions == 0 || repetitions > MAX_REPETITIONS {
        return Err(ApiError::bad_request(format!(
            "repetitions must lie in 1..={MAX_REPETITIONS}"
        )));
    }
    let database_ids = req
        .database_ids
        .iter()
        .map(|name| engine.registry().resolve(name))
        .collect::<Result<Vec<_>, _>>()?;

    let (session_id, generated) = match session_from(&headers) {
        Some(s) => (s, false),
        None => (uuid::Uuid::new_v4().to_string(), true),
    };
    let mut spec = RunSpec::new(test_kind, database_ids, session_id.clone()).repetitions(repetitions);
    spec.payload_seed = req.payload_seed;
    let trials_total = spec.database_ids.len() as u64 * u64::from(repetitions);
    let run_id = engine.start_run(spec, ip)?;

    let mut response = (
        StatusCode::ACCEPTED,
        Json(json!({ "run_id": run_id, "session_id": session_id, "trials_total": trials_total })),
    )
        .into_response();
    let h = response.headers_mut();
    if let Ok(v) = HeaderValue::from_str(&session_id) {
        h.insert(SESSION_HEADER, v);
    }
    if generated {
        let cookie = format!("{SESSION_COOKIE}={session_id}; Path=/; SameSite=Lax");
        if let Ok(v) = HeaderValue::from_str(&cookie) {
            h.insert(header::SET_COOKIE, v);
        }
    }
    Ok(response)
}

async fn get_run(
    State(engine): State<Engine>,
    Path(run_id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let status = engine.run_status(&run_id)?;
    let trials = engine.trials(&run_id);
    Ok(Json(json!({ "status": status, "trials": trials })))
}

async fn aggregates(State(engine): State<Engine>) -> Json<serde_json::Value> {
    Json(json!({ "cells": engine.store().aggregates() }))
}

async fn databases(State(engine): State<Engine>) -> Json<serde_json::Value> {
    let list: Vec<_> = engine
        .registry()
        .ids()
        .iter()
        .map(|id| {
            let caps = engine.registry().get(id).map(|a| a.capabilities());
            json!({ "id": id, "capabilities": caps })
        })
        .collect();
    Json(json!({ "databases": list }))
}

async fn extremes(
    State(engine): State<Engine>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let unknown = || ApiError::new(StatusCode::NOT_FOUND, "unknown_database", format!("unknown database {id:?}"));
    let db = DatabaseId::new(id.as_str()).map_err(|_| unknown())?;
    let extremes = match engine.store().extremes(&db) {
        Ok(e) => e,
        // Registered but never benchmarked: nothing to report yet.
        Err(ResultStoreError::UnknownDatabase(_)) if engine.registry().contains(&db) => Vec::new(),
        Err(ResultStoreError::UnknownDatabase(_)) => return Err(unknown()),
        Err(other) => return Err(other.into()),
    };
    Ok(Json(json!({ "database_id": db, "extremes": extremes })))
}

async fn heatmap(State(engine): State<Engine>) -> Json<serde_json::Value> {
    Json(json!({ "points": engine.store().heatmap_points() }))
}

async fn tests_list() -> Json<serde_json::Value> {
    Json(json!({ "tests": test_matrix() }))
}

fn to_sse(event: EngineEvent) -> Event {
    match event {
        EngineEvent::Trial(trial) => Event::default()
            .event("trial")
            .json_data(trial)
            .expect("trial serializes"),
        EngineEvent::RunCompleted(status) => Event::default()
            .event("run_completed")
            .json_data(status)
            .expect("status serializes"),
    }
}

async fn stream(State(engine): State<Engine>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    // Lagged subscribers skip what they missed.
    let events = BroadcastStream::new(engine.subscribe())
        .filter_map(|e| async move { e.ok().map(|e| Ok(to_sse(e))) });
    Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}

/// Builds the service router. Static UI assets are served from `static_dir` when it exists.
pub fn router(engine: Engine, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/runs", post(create_run))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/aggregates", get(aggregates))
        .route("/api/databases", get(databases))
        .route("/api/databases/{id}/extremes", get(extremes))
        .route("/api/heatmap", get(heatmap))
        .route("/api/tests", get(tests_list))
        .route("/api/stream", get(stream))
        .layer(DefaultBodyLimit::max(BODY_LIMIT_BYTES))
        .layer(RequestBodyLimitLayer::new(BODY_LIMIT_BYTES))
        .with_state(engine);
    match static_dir.filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
