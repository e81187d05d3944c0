//! Retrieval-augmented course recommendation.
//!
//! The pipeline loads a course catalog ([`catalog`]), embeds every course
//! ([`embedding`]) into an exact cosine index ([`vecindex`]), and answers a
//! user message by retrieving the closest courses, composing a templated
//! prompt within a token budget ([`prompting`]) and asking a text generator
//! for the reply ([`generation`]). [`recommender`] wires these together with
//! chat sessions; [`baseline`] is the TF-IDF comparison recommender.

pub mod baseline;
pub mod catalog;
pub mod embedding;
pub mod generation;
pub mod prompting;
pub mod provider;
pub mod recommender;
#[cfg(feature = "remote")]
pub mod remote;
pub mod vecindex;

pub use baseline::{build_tfidf, baseline_recommend, compare_latency, BaselineError, LatencyReport, TfidfModel};
pub use catalog::{load_catalog, top_rated, Catalog, CatalogError, Course, Difficulty, HeaderMap};
pub use embedding::{cosine_similarity, deterministic_embed, Embedder, EmbeddingVector, HashingEmbedder};
pub use generation::{parse_recommendations, scripted_generate, Generator, ParsedRecommendation, ScriptedGenerator};
pub use prompting::{compose_prompt, default_template, estimate_tokens, fit_to_budget, ComposedPrompt, PromptTemplate};
pub use provider::ProviderError;
pub use recommender::{
    default_recommendations, ChatSession, RecommendError, RecommendationResponse, Recommender,
    RecommenderConfig, SessionStore,
};
pub use vecindex::{build_index, SearchHit, VectorIndex};
