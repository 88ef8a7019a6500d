//! JSON endpoints over the session manager.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hcla_core::detector::MODEL_FORMAT_VERSION;
use hcla_core::domain::validate_transaction;
use hcla_core::explainer::EXPLAINER_TEMPLATE_VERSION;
use hcla_core::intent::PARSER_TEMPLATE_VERSION;
use hcla_core::orchestrator::{OrchestratorError, SessionManager, TurnResult};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::config::ServiceConfig;
use crate::{build_manager, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into(), trace_id: None } }
    }

    fn malformed(detail: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "MalformedBody", detail.to_string())
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let code = match &e {
            OrchestratorError::UnknownSession(_) => "UnknownSession",
            OrchestratorError::UnknownTrace(_) => "UnknownTrace",
            OrchestratorError::InvalidThreshold(_) | OrchestratorError::Schema(_) => {
                return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "SchemaMismatch", e.to_string())
            }
        };
        ApiError::new(StatusCode::NOT_FOUND, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(ApiError::malformed)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))
}

type AppState = Arc<SessionManager>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    wallet: Option<String>,
}

#[derive(Debug, Deserialize)]
struct MessageBody {
    text: String,
}

#[derive(Debug, Deserialize)]
struct DetectBody {
    transactions: Vec<serde_json::Map<String, Value>>,
}

#[derive(Debug, Serialize)]
struct Rejected {
    index: usize,
    reason: String,
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn create_session(State(manager): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: NewSession = if body.iter().all(u8::is_ascii_whitespace) { NewSession::default() } else { parse_body(&body)? };
    let id = manager.new_session_with_wallet(req.wallet);
    Ok(Json(json!({"session_id": id})))
}

async fn post_message(
    State(manager): State<AppState>,
    Path(session_id): Path<String>,
    body: Bytes,
) -> Result<Json<TurnResult>, ApiError> {
    let req: MessageBody = parse_body(&body)?;
    let result = blocking(move || manager.handle_turn(&session_id, &req.text)).await??;
    if let Some(err) = &result.error {
        return Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody { code: err.code.clone(), message: err.message.clone(), trace_id: Some(result.trace_id) },
        });
    }
    Ok(Json(result))
}

async fn get_trace(
    State(manager): State<AppState>,
    Path((session_id, trace_id)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    let trace = manager.get_trace(&session_id, &trace_id)?;
    Ok(Json(json!(trace)))
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

async fn detect(State(manager): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: DetectBody = parse_body(&body)?;
    let out = blocking(move || {
        let mut valid = Vec::new();
        let mut rejected = Vec::new();
        for (index, row) in req.transactions.iter().enumerate() {
            let raw: BTreeMap<String, String> = row.iter().map(|(k, v)| (k.clone(), cell(v))).collect();
            match validate_transaction(&raw) {
                Ok(tx) => valid.push(tx),
                Err(e) => rejected.push(Rejected { index, reason: e.primary_reason().to_string() }),
            }
        }
        let scores: Vec<_> = manager.engine().score(&valid).into_iter().map(|s| s.score).collect();
        json!({"scores": scores, "rejected": rejected})
    })
    .await?;
    Ok(Json(out))
}

async fn model(State(manager): State<AppState>) -> Json<Value> {
    let engine = manager.engine();
    let m = engine.model();
    Json(json!({
        "format_version": MODEL_FORMAT_VERSION,
        "feature_schema": m.feature_schema,
        "config": m.config,
        "trees": m.trees.len(),
        "learning_rate": m.learning_rate,
        "base_margin": m.base_margin,
        "threshold": engine.threshold(),
        "store_rows": engine.store().len(),
        "template_versions": {"parser": PARSER_TEMPLATE_VERSION, "explainer": EXPLAINER_TEMPLATE_VERSION},
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

pub fn router(manager: Arc<SessionManager>, cors_origins: &[String]) -> Router {
    let origins: Vec<HeaderValue> = cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
    let cors = CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/model", get(model))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/traces/{trace_id}", get(get_trace))
        .route("/v1/detect", post(detect))
        .fallback(not_found)
        .layer(cors)
        .with_state(manager)
}

/// Serves until Ctrl-C; in-flight turns finish before shutdown.
pub async fn serve(config: ServiceConfig) -> Result<(), GatewayError> {
    let manager = Arc::new(build_manager(&config)?);
    let app = router(manager, &config.cors_origins);
    let addr = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| GatewayError::Io { context: format!("binding {addr}"), source })?;
    eprintln!("listening on http://{addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| GatewayError::Io { context: "serving".into(), source })
}
