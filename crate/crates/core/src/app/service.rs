//! HTTP inference service.
//!
//! | method | path       | response                                        |
//! |--------|------------|-------------------------------------------------|
//! | GET    | `/health`  | `{"status":"ok","model":"<id>"}`                |
//! | GET    | `/labels`  | `{"labels":["1",...,"Z"]}`                      |
//! | POST   | `/predict` | [`PredictionResponse`]                          |
//!
//! `/predict` takes a raw PNG or JPEG body, or JSON `{"image":"<base64>"}`
//! (a `data:` URL prefix is accepted). Errors are JSON
//! `{"error":"<message>","code":"<kind>"}` with a matching status.

use std::future::Future;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::preproc::{io::decode_rgb, run_pipeline_observed, StageTiming};

use super::config::ServiceConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProbability {
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    /// Most probable labels, descending.
    pub top: Vec<LabelProbability>,
    pub model: String,
    /// Per-stage preprocessing times plus decode and inference, in ms.
    pub timings_ms: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.message, code: self.code.to_string() };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Clone)]
struct AppState {
    model: Arc<Model>,
    id: Arc<str>,
    top_k: usize,
}

pub fn router(model: Arc<Model>, cfg: &ServiceConfig) -> Router {
    let state = AppState {
        id: model.id().into(),
        top_k: cfg.top_k.min(model.classes()),
        model,
    };
    Router::new()
        .route("/health", get(health))
        .route("/labels", get(labels))
        .route("/predict", post(predict))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
        })
        .layer(DefaultBodyLimit::max(cfg.body_limit))
        .with_state(state)
}

async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "model": &*s.id }))
}

async fn labels(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "labels": s.model.labels() }))
}

#[derive(Deserialize)]
struct JsonImage {
    image: String,
}

fn image_bytes(headers: &HeaderMap, body: Bytes) -> Result<Vec<u8>, ApiError> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    if !is_json {
        return Ok(body.to_vec());
    }
    let req: JsonImage = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_json", format!("invalid JSON body: {e}")))?;
    let encoded = match req.image.split_once(";base64,") {
        Some((prefix, data)) if prefix.starts_with("data:") => data,
        _ => req.image.as_str(),
    };
    base64::engine::general_purpose::STANDARD
        .decode(encoded.trim())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_base64", format!("invalid base64 image: {e}")))
}

/// Decodes, preprocesses and classifies one image.
pub fn predict_image(model: &Model, bytes: &[u8], top_k: usize) -> Result<(Vec<(usize, f64)>, Vec<StageTiming>), String> {
    let start = Instant::now();
    let img = decode_rgb(bytes).map_err(|e| e.to_string())?;
    let mut timings = vec![StageTiming { stage: "decode".into(), millis: start.elapsed().as_secs_f64() * 1e3 }];
    let (input, stages) = run_pipeline_observed(&img, model.pipeline(), |_, _| {}).map_err(|e| e.to_string())?;
    timings.extend(stages);
    let start = Instant::now();
    let prediction = model.predict(&input).map_err(|e| e.to_string())?;
    timings.push(StageTiming { stage: "inference".into(), millis: start.elapsed().as_secs_f64() * 1e3 });
    Ok((prediction.top_k(top_k), timings))
}

async fn predict(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<PredictionResponse>, ApiError> {
    let body = body.map_err(|r| {
        let code = if r.status() == StatusCode::PAYLOAD_TOO_LARGE { "too_large" } else { "bad_body" };
        ApiError::new(r.status(), code, r.body_text())
    })?;
    let bytes = image_bytes(&headers, body)?;
    if bytes.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_body", "request body is empty"));
    }
    let model = Arc::clone(&s.model);
    let top_k = s.top_k;
    let (top, timings_ms) = tokio::task::spawn_blocking(move || predict_image(&model, &bytes, top_k))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", e))?;
    let labels = s.model.labels();
    Ok(Json(PredictionResponse {
        top: top
            .into_iter()
            .map(|(c, p)| LabelProbability { label: labels[c].clone(), probability: p })
            .collect(),
        model: s.id.to_string(),
        timings_ms,
    }))
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    model: Arc<Model>,
    cfg: &ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(model, cfg)).with_graceful_shutdown(shutdown).await
}
