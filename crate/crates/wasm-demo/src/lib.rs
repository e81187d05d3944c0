//! Browser demo over the bundled sample catalog.
//!
//! Three operations, each returning a JSON string:
//! - `search`: top-k cosine retrieval with scores,
//! - `compose`: the prompt the generator would see, trimmed to a token budget,
//! - `contrast`: the scripted RAG reply next to the TF-IDF baseline's answer.
//!
//! Nothing here reads a clock, so it runs on `wasm32-unknown-unknown`.

use serde::Serialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use ramo_core::baseline::{baseline_recommend, build_tfidf, TfidfModel, DEFAULT_MIN_SIMILARITY};
use ramo_core::catalog::{load_catalog, top_rated, Catalog, HeaderMap};
use ramo_core::embedding::{Embedder, HashingEmbedder};
use ramo_core::generation::{parse_recommendations, scripted_generate};
use ramo_core::prompting::{
    builtin_templates, compose_prompt, fit_to_budget, render_context, ComposedPrompt, PromptTemplate,
};
use ramo_core::vecindex::{build_index, SearchHit, VectorIndex};

const SAMPLE_CATALOG: &str = include_str!("../../core/fixtures/mini_catalog.csv");
const MAX_K: usize = 50;

#[derive(Serialize)]
struct Hit<'a> {
    course_id: usize,
    title: &'a str,
    score: f64,
}

#[wasm_bindgen]
pub struct Demo {
    catalog: Catalog,
    embedder: HashingEmbedder,
    index: VectorIndex,
    tfidf: TfidfModel,
    templates: Vec<PromptTemplate>,
}

impl Demo {
    pub fn load() -> Result<Demo, String> {
        let catalog = load_catalog(SAMPLE_CATALOG.as_bytes(), &HeaderMap::default())
            .map_err(|e| e.to_string())?;
        let embedder = HashingEmbedder::default();
        let index = build_index(&catalog, &embedder).map_err(|e| e.to_string())?;
        let tfidf = build_tfidf(&catalog).map_err(|e| e.to_string())?;
        Ok(Demo { catalog, embedder, index, tfidf, templates: builtin_templates() })
    }

    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, String> {
        if query.trim().is_empty() {
            return Err("type a question first".into());
        }
        let vector = self
            .embedder
            .embed_batch(&[query.to_string()])
            .map_err(|e| e.to_string())?
            .remove(0);
        self.index.search(&vector, k.clamp(1, MAX_K)).map_err(|e| e.to_string())
    }

    fn hits_json(&self, hits: &[SearchHit]) -> Value {
        let hits: Vec<Hit> = hits
            .iter()
            .map(|h| Hit {
                course_id: h.course_id,
                title: self.catalog.get(h.course_id).map_or("?", |c| c.name.as_str()),
                score: h.score,
            })
            .collect();
        json!(hits)
    }

    fn template(&self, id: &str) -> Result<&PromptTemplate, String> {
        self.templates
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| format!("unknown template {id:?}"))
    }

    fn prompt_json(prompt: &ComposedPrompt) -> Value {
        json!({
            "system": prompt.system_message(),
            "user": prompt.user_message(),
            "estimated_tokens": prompt.estimated_tokens,
        })
    }

    pub fn search_value(&self, query: &str, k: usize) -> Result<Value, String> {
        let hits = self.retrieve(query, k)?;
        Ok(json!({ "k": k.clamp(1, MAX_K), "hits": self.hits_json(&hits) }))
    }

    pub fn compose_value(
        &self,
        query: &str,
        template_id: &str,
        k: usize,
        budget: usize,
    ) -> Result<Value, String> {
        let template = self.template(template_id)?;
        let hits = self.retrieve(query, k)?;
        let context = render_context(&hits, &self.catalog, &template.detail_fields)
            .map_err(|e| e.to_string())?;
        let full = compose_prompt(template, &context, query).map_err(|e| e.to_string())?;
        let fitted = fit_to_budget(&full, &hits, &self.catalog, template, budget)
            .map_err(|e| e.to_string())?;
        Ok(json!({
            "budget": budget,
            "untrimmed_tokens": full.estimated_tokens,
            "kept": self.hits_json(&fitted.hits),
            "dropped": self.hits_json(&hits[fitted.hits.len()..]),
            "prompt": Self::prompt_json(&fitted.prompt),
        }))
    }

    pub fn contrast_value(&self, query: &str, k: usize) -> Result<Value, String> {
        let template = self.template("default")?;
        let hits = self.retrieve(query, k)?;
        let context = render_context(&hits, &self.catalog, &template.detail_fields)
            .map_err(|e| e.to_string())?;
        let prompt = compose_prompt(template, &context, query).map_err(|e| e.to_string())?;
        let reply = scripted_generate(&prompt);
        let titles: Vec<String> = parse_recommendations(&reply, &self.catalog)
            .into_iter()
            .map(|r| r.course_id.and_then(|id| self.catalog.get(id)).map_or(r.title_text, |c| c.name.clone()))
            .collect();
        let baseline = match baseline_recommend(&self.tfidf, query, 5, DEFAULT_MIN_SIMILARITY) {
            Ok(hits) => json!({ "hits": self.hits_json(&hits) }),
            Err(e) => json!({ "error": e.to_string() }),
        };
        Ok(json!({
            "rag": { "reply": reply, "recommendations": titles },
            "baseline": baseline,
        }))
    }

    pub fn catalog_value(&self) -> Value {
        let courses: Vec<Value> = self
            .catalog
            .courses()
            .iter()
            .map(|c| json!({ "id": c.id, "title": c.name, "rating": c.rating, "difficulty": c.difficulty.to_string() }))
            .collect();
        let defaults: Vec<&str> = top_rated(&self.catalog, 5).iter().map(|c| c.name.as_str()).collect();
        let templates: Vec<&str> = self.templates.iter().map(|t| t.id.as_str()).collect();
        json!({ "courses": courses, "defaults": defaults, "templates": templates })
    }
}

fn to_js(result: Result<Value, String>) -> Result<String, JsError> {
    result.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Demo, JsError> {
        Demo::load().map_err(|e| JsError::new(&e))
    }

    /// Courses, the five default picks and template ids.
    pub fn catalog(&self) -> String {
        self.catalog_value().to_string()
    }

    pub fn search(&self, query: &str, k: usize) -> Result<String, JsError> {
        to_js(self.search_value(query, k))
    }

    pub fn compose(&self, query: &str, template_id: &str, k: usize, budget: usize) -> Result<String, JsError> {
        to_js(self.compose_value(query, template_id, k, budget))
    }

    pub fn contrast(&self, query: &str, k: usize) -> Result<String, JsError> {
        to_js(self.contrast_value(query, k))
    }
}
