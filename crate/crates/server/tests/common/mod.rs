#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use ramo_core::catalog::{load_catalog, Catalog, HeaderMap};
use ramo_core::embedding::{Embedder, HashingEmbedder};
use ramo_core::generation::{Generator, ScriptedGenerator};
use ramo_core::prompting::{builtin_templates, PromptTemplate};
use ramo_core::recommender::{Recommender, RecommenderConfig};
use ramo_core::vecindex::build_index;
use ramo_server::{router, AppState};

pub const FIXTURE: &str = include_str!("../../../core/fixtures/mini_catalog.csv");

pub fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini_catalog.csv")
}

pub fn catalog() -> Arc<Catalog> {
    Arc::new(load_catalog(FIXTURE.as_bytes(), &HeaderMap::default()).unwrap())
}

pub fn template(id: &str) -> PromptTemplate {
    builtin_templates().into_iter().find(|t| t.id == id).unwrap()
}

pub fn recommender_with(
    embedder: Arc<dyn Embedder>,
    generator: Arc<dyn Generator>,
    template: PromptTemplate,
    config: RecommenderConfig,
) -> Recommender {
    let catalog = catalog();
    let index = Arc::new(build_index(&catalog, &HashingEmbedder::default()).unwrap());
    Recommender::new(catalog, index, embedder, generator, template, config).unwrap()
}

/// Fixture pipeline with the scripted generator, which is returned for call counting.
pub fn scripted_app(template_id: &str, config: RecommenderConfig) -> (Router, Arc<ScriptedGenerator>) {
    let generator = Arc::new(ScriptedGenerator::new());
    let rec = recommender_with(
        Arc::new(HashingEmbedder::default()),
        generator.clone(),
        template(template_id),
        config,
    );
    (app(rec), generator)
}

pub fn app(rec: Recommender) -> Router {
    router(AppState::ready(rec, Duration::from_secs(3600)), &[]).unwrap()
}

pub async fn send(app: &Router, request: Request<Body>) -> (StatusCode, Value) {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, body)
}

pub fn chat_request(body: &str) -> Request<Body> {
    Request::post("/api/chat")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

pub fn chat_json(message: &str, session_id: Option<&str>) -> Request<Body> {
    let mut body = serde_json::json!({ "message": message });
    if let Some(id) = session_id {
        body["session_id"] = id.into();
    }
    chat_request(&body.to_string())
}
