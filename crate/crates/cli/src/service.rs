//! `em serve`: the matcher behind a small JSON HTTP API.
//!
//! * `POST /match` with `{"left": {..}, "right": {..}}` and optional
//!   `"profile"`, `"optimize"` and `"settings": {path: value}` returns
//!   `{"decision", "explanation", "run_id"}`.
//! * `GET /health` returns `{"status": "ok", "version"}`.
//!
//! Errors are `{"error": code, "message"}`: 400 for malformed requests, 404
//! for an unknown catalog profile, 422 when no decision could be read, 502
//! when the model backend fails.

use std::future::Future;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use em_core::catalog::{CatalogError, CatalogStore, PerformanceProfile};
use em_core::{EntityPair, EntityRecord, MatchError, MatchPrediction, Matcher, ParameterTree};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::resolve::{resolve, ParamRequest, ResolveError};

#[derive(Clone)]
pub struct ServiceState {
    pub matcher: Matcher,
    pub defaults: ParameterTree,
    pub store: CatalogStore,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<ResolveError> for ApiError {
    fn from(e: ResolveError) -> Self {
        match &e {
            ResolveError::Catalog(CatalogError::ProfileNotFound(_)) => {
                ApiError::new(StatusCode::NOT_FOUND, "profile_not_found", e.to_string())
            }
            ResolveError::Catalog(CatalogError::InvalidRecord(_)) | ResolveError::Setting { .. } => {
                ApiError::bad_request(e.to_string())
            }
            ResolveError::Catalog(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "catalog_error", e.to_string()),
        }
    }
}

impl From<MatchError> for ApiError {
    fn from(e: MatchError) -> Self {
        let status = match &e {
            MatchError::ToolLoopExceeded { .. } | MatchError::UnparseableDecision(_) => StatusCode::UNPROCESSABLE_ENTITY,
            MatchError::Backend(_) => StatusCode::BAD_GATEWAY,
            MatchError::Param(_) => StatusCode::BAD_REQUEST,
            MatchError::MissingTool(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/match", post(match_pair))
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
        })
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: ServiceState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": em_core::TOOLCHAIN_VERSION}))
}

struct MatchRequest {
    pair: EntityPair,
    hint: Option<String>,
    optimize: Option<PerformanceProfile>,
    settings: Vec<(String, String)>,
}

fn parse_request(body: &[u8]) -> Result<MatchRequest, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| ApiError::bad_request("request body must be a JSON object"))?;
    let entity = |side: &str| -> Result<EntityRecord, ApiError> {
        let v = obj.get(side).ok_or_else(|| ApiError::bad_request(format!("missing `{side}`")))?;
        EntityRecord::from_json(v).map_err(|e| ApiError::bad_request(format!("`{side}`: {e}")))
    };
    let pair = EntityPair::new("request", entity("left")?, entity("right")?);
    let text = |key: &str| -> Result<Option<String>, ApiError> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(ApiError::bad_request(format!("`{key}` must be a string"))),
        }
    };
    let optimize = text("optimize")?
        .map(|s| s.parse::<PerformanceProfile>())
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let settings = match obj.get("settings") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Object(map)) => map
            .iter()
            .map(|(path, v)| {
                let raw = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (path.clone(), raw)
            })
            .collect(),
        Some(_) => return Err(ApiError::bad_request("`settings` must be an object")),
    };
    Ok(MatchRequest {
        pair,
        hint: text("profile")?,
        optimize,
        settings,
    })
}

fn run_match(state: &ServiceState, req: MatchRequest) -> Result<MatchPrediction, ApiError> {
    let sample = [req.pair.clone()];
    let params = ParamRequest {
        hint: req.hint.as_deref(),
        optimize: req.optimize,
        settings: req.settings,
        sample: Some(&sample),
    };
    let cal = resolve(&state.store, &state.defaults, &params)?;
    Ok(state.matcher.match_pair(&req.pair, &cal.tree, &cal.knowledge)?)
}

async fn match_pair(State(state): State<ServiceState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req = parse_request(&body)?;
    let prediction = tokio::task::spawn_blocking(move || run_match(&state, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!({
        "decision": prediction.decision,
        "explanation": prediction.explanation,
        "run_id": prediction.run_id,
    })))
}
