//! HTTP routes: `POST /api/chat`, `GET /api/defaults`, `GET /healthz`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info, warn};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use ramo_core::catalog::Catalog;
use ramo_core::generation::ParsedRecommendation;
use ramo_core::prompting::PromptError;
use ramo_core::recommender::{
    default_recommendations, Providers, RecommendError, Recommender, ResponseSource,
    SessionStore, Stage,
};

pub const PROVIDER_KEY_HEADER: &str = "x-provider-key";
pub const DEFAULT_K: usize = 5;
pub const MAX_K: usize = 50;

/// Everything a loaded service shares between requests.
pub struct Pipeline {
    pub recommender: Recommender,
    pub sessions: SessionStore,
}

/// Shared handler state. Starts empty so the listener can come up (and answer
/// 503) while the catalog and index are still loading.
#[derive(Clone, Default)]
pub struct AppState {
    pipeline: Arc<OnceLock<Arc<Pipeline>>>,
}

impl AppState {
    pub fn loading() -> Self {
        Self::default()
    }

    pub fn ready(recommender: Recommender, session_ttl: Duration) -> Self {
        let state = Self::default();
        state.install(recommender, session_ttl);
        state
    }

    /// Makes the pipeline live. Later calls are ignored.
    pub fn install(&self, recommender: Recommender, session_ttl: Duration) {
        let pipeline = Pipeline { recommender, sessions: SessionStore::new(session_ttl) };
        if self.pipeline.set(Arc::new(pipeline)).is_err() {
            warn!("pipeline already installed; ignoring reload");
        }
    }

    pub fn pipeline(&self) -> Option<&Arc<Pipeline>> {
        self.pipeline.get()
    }

    fn loaded(&self) -> Result<Arc<Pipeline>, ApiError> {
        self.pipeline
            .get()
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "index not loaded yet"))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    stage: Option<Stage>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<Stage>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), stage: None }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<RecommendError> for ApiError {
    fn from(err: RecommendError) -> Self {
        let status = match &err {
            RecommendError::EmptyQuestion => StatusCode::BAD_REQUEST,
            RecommendError::Prompt(PromptError::BudgetTooSmall { .. }) => StatusCode::BAD_REQUEST,
            RecommendError::Provider { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let stage = match &err {
            RecommendError::Provider { stage, .. } => Some(*stage),
            _ => None,
        };
        if status.is_server_error() {
            error!("chat request failed: {err}");
        }
        Self { status, message: err.to_string(), stage }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: &self.message, stage: self.stage };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationItem {
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub course_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl RecommendationItem {
    /// Fills title, link and rating from the catalog when the item resolved.
    pub fn from_parsed(parsed: &ParsedRecommendation, catalog: &Catalog) -> Self {
        let course = parsed.course_id.and_then(|id| catalog.get(id));
        Self {
            title: course.map_or_else(|| parsed.title_text.clone(), |c| c.name.clone()),
            url: parsed
                .url
                .clone()
                .or_else(|| course.map(|c| c.url.clone()).filter(|u| !u.is_empty())),
            rating: course.and_then(|c| c.rating),
            course_id: parsed.course_id,
            reason: parsed.reason.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub session_id: String,
    pub reply: String,
    pub recommendations: Vec<RecommendationItem>,
    pub source: ResponseSource,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultsReply {
    pub recommendations: Vec<RecommendationItem>,
    pub source: ResponseSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub catalog_count: usize,
    pub index_dim: usize,
    pub embedder: String,
    pub generator: String,
}

fn provider_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get(PROVIDER_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .map(str::to_string)
}

async fn chat(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<ChatReply>, ApiError> {
    let pipeline = state.loaded()?;
    let request: ChatRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))?;
    if request.message.trim().is_empty() {
        return Err(RecommendError::EmptyQuestion.into());
    }
    let key = provider_key(&headers);
    let (session_id, slot) = pipeline.sessions.get_or_create(request.session_id.as_deref());
    // Take a place in the session's queue now, so turns run in arrival order.
    let ticket = slot.ticket();

    let worker = Arc::clone(&pipeline);
    let message = request.message;
    let response = tokio::task::spawn_blocking(move || {
        let rec = &worker.recommender;
        let providers = match &key {
            Some(key) => Providers {
                embedder: rec.embedder().with_credential(key),
                generator: rec.generator().with_credential(key),
            },
            None => Providers::default(),
        };
        let guard = ticket.wait();
        let mut session = guard.session();
        rec.recommend_with(&mut session, &message, &providers)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))??;

    let catalog = pipeline.recommender.catalog();
    info!(
        "chat session={session_id} hits={} recommendations={} total_ms={:.1}",
        response.retrieval_hits.len(),
        response.recommendations.len(),
        response.latency.total_ms
    );
    Ok(Json(ChatReply {
        session_id,
        reply: response.reply,
        recommendations: response
            .recommendations
            .iter()
            .map(|r| RecommendationItem::from_parsed(r, catalog))
            .collect(),
        source: response.source,
        latency_ms: response.latency.total_ms,
    }))
}

async fn defaults(
    State(state): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<DefaultsReply>, ApiError> {
    let pipeline = state.loaded()?;
    let k = match params.get("k") {
        None => DEFAULT_K,
        Some(raw) => raw
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|k| (1..=MAX_K).contains(k))
            .ok_or_else(|| ApiError::bad_request(format!("k must be an integer in 1..={MAX_K}")))?,
    };
    let catalog = pipeline.recommender.catalog();
    let response = default_recommendations(catalog, k);
    Ok(Json(DefaultsReply {
        recommendations: response
            .recommendations
            .iter()
            .map(|r| RecommendationItem::from_parsed(r, catalog))
            .collect(),
        source: response.source,
    }))
}

async fn healthz(State(state): State<AppState>) -> Response {
    match state.pipeline() {
        Some(pipeline) => {
            let rec = &pipeline.recommender;
            Json(Health {
                status: "ok".into(),
                catalog_count: rec.catalog().len(),
                index_dim: rec.index().dim(),
                embedder: rec.embedder().name().to_string(),
                generator: rec.generator().name().to_string(),
            })
            .into_response()
        }
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({ "status": "loading" })),
        )
            .into_response(),
    }
}

fn cors_layer(origins: &[String]) -> anyhow::Result<Option<CorsLayer>> {
    if origins.is_empty() {
        return Ok(None);
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::from(Any)
    } else {
        let values = origins
            .iter()
            .map(|o| HeaderValue::from_str(o))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| anyhow::anyhow!("invalid CORS origin: {e}"))?;
        AllowOrigin::list(values)
    };
    Ok(Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE, header::HeaderName::from_static(PROVIDER_KEY_HEADER)]),
    ))
}

pub fn router(state: AppState, cors_origins: &[String]) -> anyhow::Result<Router> {
    let router = Router::new()
        .route("/api/chat", post(chat))
        .route("/api/defaults", get(defaults))
        .route("/healthz", get(healthz))
        .with_state(state);
    Ok(match cors_layer(cors_origins)? {
        Some(cors) => router.layer(cors),
        None => router,
    })
}
