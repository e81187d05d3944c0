//! The retrieval-augmented recommendation pipeline and chat sessions.
//!
//! A turn runs: embed the message, exact top-k search, render the retrieved
//! courses, compose the three-part prompt, trim it to the token budget,
//! generate, and parse the reply into structured recommendations.

use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::hash::{BuildHasher, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{top_rated, Catalog};
use crate::embedding::Embedder;
use crate::generation::{parse_recommendations, Generator, ParsedRecommendation};
use crate::prompting::{
    compose_prompt_ordered, fit_to_budget, render_context, ComposedPrompt, PromptError,
    PromptOrder, PromptTemplate, DEFAULT_TOKEN_BUDGET, REPLY_RESERVE_TOKENS,
};
use crate::provider::ProviderError;
use crate::vecindex::{IndexError, SearchHit, VectorIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Embed,
    Search,
    Prompt,
    Generate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Embed => "embed",
            Stage::Search => "search",
            Stage::Prompt => "prompt",
            Stage::Generate => "generate",
        })
    }
}

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("{stage} stage failed: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
    #[error("search failed: {0}")]
    Index(#[from] IndexError),
    #[error("prompt composition failed: {0}")]
    Prompt(PromptError),
    #[error("index was built for a different catalog ({index} vs {catalog})")]
    FingerprintMismatch { index: String, catalog: String },
}

impl From<PromptError> for RecommendError {
    fn from(err: PromptError) -> Self {
        match err {
            PromptError::EmptyQuestion => RecommendError::EmptyQuestion,
            other => RecommendError::Prompt(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommenderConfig {
    pub top_k: usize,
    pub token_budget: usize,
    pub reply_reserve: usize,
    pub prompt_order: PromptOrder,
    /// Earlier turns prepended to the question; 0 keeps turns independent.
    pub history_turns: usize,
    /// Courses listed by the defaults path.
    pub default_count: usize,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        Self {
            top_k: 8,
            token_budget: DEFAULT_TOKEN_BUDGET,
            reply_reserve: REPLY_RESERVE_TOKENS,
            prompt_order: PromptOrder::TemplateFirst,
            history_turns: 0,
            default_count: 5,
        }
    }
}

impl RecommenderConfig {
    /// Prompt budget left after reserving room for the reply.
    pub fn prompt_budget(&self) -> usize {
        self.token_budget.saturating_sub(self.reply_reserve).max(1)
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub user_message: String,
    pub reply: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    turns: Vec<Turn>,
    pub created_at_ms: u64,
}

impl ChatSession {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
            created_at_ms: now_millis(),
        }
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    fn push_turn(&mut self, user_message: &str, reply: &str) {
        let last = self.turns.last().map_or(self.created_at_ms, |t| t.timestamp_ms);
        self.turns.push(Turn {
            user_message: user_message.to_string(),
            reply: reply.to_string(),
            timestamp_ms: now_millis().max(last),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    Rag,
    Defaults,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub embed_ms: f64,
    pub search_ms: f64,
    pub prompt_ms: f64,
    pub generate_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationResponse {
    pub reply: String,
    pub recommendations: Vec<ParsedRecommendation>,
    pub source: ResponseSource,
    pub retrieval_hits: Vec<SearchHit>,
    pub latency: LatencyBreakdown,
    /// The serialized generator input; `None` on the defaults path.
    #[serde(skip)]
    pub prompt: Option<ComposedPrompt>,
}

/// Everything up to the generator call.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPrompt {
    pub prompt: ComposedPrompt,
    pub retrieval_hits: Vec<SearchHit>,
    pub context_hits: Vec<SearchHit>,
    pub latency: LatencyBreakdown,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Optional per-request provider replacements (e.g. a caller-supplied key).
#[derive(Default, Clone)]
pub struct Providers {
    pub embedder: Option<Arc<dyn Embedder>>,
    pub generator: Option<Arc<dyn Generator>>,
}

pub struct Recommender {
    catalog: Arc<Catalog>,
    index: Arc<VectorIndex>,
    embedder: Arc<dyn Embedder>,
    generator: Arc<dyn Generator>,
    template: PromptTemplate,
    config: RecommenderConfig,
}

impl Recommender {
    pub fn new(
        catalog: Arc<Catalog>,
        index: Arc<VectorIndex>,
        embedder: Arc<dyn Embedder>,
        generator: Arc<dyn Generator>,
        template: PromptTemplate,
        config: RecommenderConfig,
    ) -> Result<Self, RecommendError> {
        if index.catalog_fingerprint() != catalog.fingerprint() {
            return Err(RecommendError::FingerprintMismatch {
                index: index.catalog_fingerprint().to_string(),
                catalog: catalog.fingerprint().to_string(),
            });
        }
        Ok(Self {
            catalog,
            index,
            embedder,
            generator,
            template,
            config,
        })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn index(&self) -> &Arc<VectorIndex> {
        &self.index
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn generator(&self) -> &Arc<dyn Generator> {
        &self.generator
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn config(&self) -> &RecommenderConfig {
        &self.config
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    fn question_with_history(&self, session: &ChatSession, message: &str) -> String {
        let n = self.config.history_turns.min(session.turns.len());
        if n == 0 {
            return message.to_string();
        }
        let mut question = String::new();
        for turn in &session.turns[session.turns.len() - n..] {
            question.push_str(&format!("User: {}\nAssistant: {}\n", turn.user_message, turn.reply));
        }
        question.push_str(message);
        question
    }

    /// Retrieval and prompt construction without calling the generator.
    pub fn prepare(
        &self,
        session: &ChatSession,
        message: &str,
        embedder: &dyn Embedder,
    ) -> Result<PreparedPrompt, RecommendError> {
        if message.trim().is_empty() {
            return Err(RecommendError::EmptyQuestion);
        }
        let mut latency = LatencyBreakdown::default();

        let started = Instant::now();
        let query = embedder
            .embed_batch(&[message.to_string()])
            .map_err(|source| RecommendError::Provider { stage: Stage::Embed, source })?
            .into_iter()
            .next()
            .ok_or(RecommendError::Provider {
                stage: Stage::Embed,
                source: ProviderError::BadResponse("no query vector".into()),
            })?;
        latency.embed_ms = ms(started.elapsed());

        let started = Instant::now();
        let hits = self.index.search(&query, self.config.top_k)?;
        latency.search_ms = ms(started.elapsed());

        let started = Instant::now();
        let question = self.question_with_history(session, message);
        let fields = &self.template.detail_fields;
        let context = render_context(&hits, &self.catalog, fields)?;
        let order = self.config.prompt_order;
        let composed = compose_prompt_ordered(&self.template, &context, &question, order)?;
        let budget = self.config.prompt_budget();
        let mut fitted = fit_to_budget(&composed, &hits, &self.catalog, &self.template, budget)?;
        if fitted.hits.is_empty() {
            // Nothing retrieved fits: offer the best-rated courses instead.
            let defaults: Vec<SearchHit> = top_rated(&self.catalog, self.config.default_count)
                .iter()
                .map(|c| SearchHit { course_id: c.id, score: 0.0 })
                .collect();
            let context = render_context(&defaults, &self.catalog, fields)?;
            let composed = compose_prompt_ordered(&self.template, &context, &question, order)?;
            fitted = fit_to_budget(&composed, &defaults, &self.catalog, &self.template, budget)?;
        }
        latency.prompt_ms = ms(started.elapsed());

        Ok(PreparedPrompt {
            prompt: fitted.prompt,
            retrieval_hits: hits,
            context_hits: fitted.hits,
            latency,
        })
    }

    pub fn recommend(
        &self,
        session: &mut ChatSession,
        message: &str,
    ) -> Result<RecommendationResponse, RecommendError> {
        self.recommend_with(session, message, &Providers::default())
    }

    pub fn recommend_with(
        &self,
        session: &mut ChatSession,
        message: &str,
        providers: &Providers,
    ) -> Result<RecommendationResponse, RecommendError> {
        let total = Instant::now();
        let embedder = providers.embedder.as_deref().unwrap_or(self.embedder.as_ref());
        let generator = providers.generator.as_deref().unwrap_or(self.generator.as_ref());
        let prepared = self.prepare(session, message, embedder)?;
        let mut latency = prepared.latency;

        let started = Instant::now();
        let reply = generator
            .generate(&prepared.prompt)
            .map_err(|source| RecommendError::Provider { stage: Stage::Generate, source })?;
        if reply.trim().is_empty() {
            return Err(RecommendError::Provider {
                stage: Stage::Generate,
                source: ProviderError::EmptyReply,
            });
        }
        latency.generate_ms = ms(started.elapsed());

        let recommendations = parse_recommendations(&reply, &self.catalog);
        session.push_turn(message, &reply);
        latency.total_ms = ms(total.elapsed());
        Ok(RecommendationResponse {
            reply,
            recommendations,
            source: ResponseSource::Rag,
            retrieval_hits: prepared.retrieval_hits,
            latency,
            prompt: Some(prepared.prompt),
        })
    }
}

pub const DEFAULTS_GREETING: &str = "Welcome! Here are some of our most popular courses:";

/// The best-rated courses as a ready-made response; never calls a generator.
pub fn default_recommendations(catalog: &Catalog, k: usize) -> RecommendationResponse {
    let courses = top_rated(catalog, k);
    let mut reply = String::from(DEFAULTS_GREETING);
    for (n, c) in courses.iter().enumerate() {
        reply.push_str(&format!("\n{}. {}", n + 1, c.name));
    }
    RecommendationResponse {
        reply,
        recommendations: courses
            .iter()
            .map(|c| ParsedRecommendation {
                course_id: Some(c.id),
                title_text: c.name.clone(),
                url: (!c.url.is_empty()).then(|| c.url.clone()),
                reason: None,
            })
            .collect(),
        source: ResponseSource::Defaults,
        retrieval_hits: Vec::new(),
        latency: LatencyBreakdown::default(),
        prompt: None,
    }
}

/// Always true: every message, including a bare "I am a new user", goes
/// through retrieval. The template's fallback instruction covers users who
/// state no preferences, and the defaults endpoint covers the empty screen.
pub fn handle_cold_start(_message: &str) -> bool {
    true
}

#[derive(Debug, Default)]
struct TicketState {
    next: u64,
    serving: u64,
}

/// A session plus a FIFO lock so concurrent turns on one session run in
/// arrival order.
#[derive(Debug)]
pub struct SessionSlot {
    tickets: Mutex<TicketState>,
    turn_done: Condvar,
    session: Mutex<ChatSession>,
    last_active: Mutex<Instant>,
}

/// A place in a session's queue, taken at arrival.
#[must_use]
pub struct Ticket {
    slot: Arc<SessionSlot>,
    number: u64,
}

pub struct SessionGuard {
    slot: Arc<SessionSlot>,
}

impl SessionSlot {
    fn new(session: ChatSession) -> Self {
        Self {
            tickets: Mutex::new(TicketState::default()),
            turn_done: Condvar::new(),
            session: Mutex::new(session),
            last_active: Mutex::new(Instant::now()),
        }
    }

    pub fn ticket(self: &Arc<Self>) -> Ticket {
        let mut state = self.tickets.lock().expect("ticket lock");
        let number = state.next;
        state.next += 1;
        Ticket { slot: Arc::clone(self), number }
    }

    pub fn snapshot(&self) -> ChatSession {
        self.session.lock().expect("session lock").clone()
    }
}

impl Ticket {
    /// Blocks until every earlier ticket on the session has finished.
    pub fn wait(self) -> SessionGuard {
        let slot = self.slot;
        {
            let mut state = slot.tickets.lock().expect("ticket lock");
            while state.serving != self.number {
                state = slot.turn_done.wait(state).expect("ticket lock");
            }
        }
        SessionGuard { slot }
    }
}

impl SessionGuard {
    pub fn session(&self) -> MutexGuard<'_, ChatSession> {
        self.slot.session.lock().expect("session lock")
    }
}

impl Drop for SessionGuard {
    fn drop(&mut self) {
        *self.slot.last_active.lock().expect("activity lock") = Instant::now();
        let mut state = self.slot.tickets.lock().expect("ticket lock");
        state.serving += 1;
        self.slot.turn_done.notify_all();
    }
}

/// In-memory sessions with idle-time eviction.
#[derive(Debug)]
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    ttl: Duration,
    counter: AtomicU64,
    hasher: RandomState,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            ttl,
            counter: AtomicU64::new(0),
            hasher: RandomState::new(),
        }
    }

    fn fresh_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let mut h1 = self.hasher.build_hasher();
        h1.write_u64(n);
        h1.write_u64(now_millis());
        let mut h2 = self.hasher.build_hasher();
        h2.write_u64(!n);
        format!("{:016x}{:016x}", h1.finish(), h2.finish())
    }

    /// The slot for `id`, or a new session when `id` is absent or unknown.
    pub fn get_or_create(&self, id: Option<&str>) -> (String, Arc<SessionSlot>) {
        let mut sessions = self.sessions.lock().expect("session map lock");
        let ttl = self.ttl;
        sessions.retain(|_, slot| slot.last_active.lock().expect("activity lock").elapsed() < ttl);
        if let Some(id) = id.filter(|id| !id.is_empty()) {
            if let Some(slot) = sessions.get(id) {
                *slot.last_active.lock().expect("activity lock") = Instant::now();
                return (id.to_string(), Arc::clone(slot));
            }
        }
        let id = loop {
            let candidate = self.fresh_id();
            if !sessions.contains_key(&candidate) {
                break candidate;
            }
        };
        let slot = Arc::new(SessionSlot::new(ChatSession::new(id.clone())));
        sessions.insert(id.clone(), Arc::clone(&slot));
        (id, slot)
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
