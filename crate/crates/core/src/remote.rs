//! HTTPS JSON clients for hosted embedding and chat-completion providers.
//!
//! Both speak the OpenAI wire format. Credentials go in the `Authorization`
//! header only, so request and response bodies are safe to log.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use log::debug;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embedding::{Embedder, EmbeddingVector};
use crate::generation::{GenerationParams, Generator};
use crate::prompting::ComposedPrompt;
use crate::provider::{ProviderError, RetryPolicy};

pub const EMBED_API_KEY_ENV: &str = "EMBED_API_KEY";
pub const GEN_API_KEY_ENV: &str = "GEN_API_KEY";
pub const DEFAULT_EMBED_ENDPOINT: &str = "https://api.openai.com/v1/embeddings";
pub const DEFAULT_EMBED_MODEL: &str = "text-embedding-ada-002";
pub const DEFAULT_CHAT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-3.5-turbo";

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn post_json<T: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    endpoint: &str,
    api_key: &str,
    body: &serde_json::Value,
) -> Result<T, ProviderError> {
    debug!("POST {endpoint} (Authorization: Bearer ***) body={body}");
    let response = agent
        .post(endpoint)
        .header("Authorization", &format!("Bearer {api_key}"))
        .send_json(body);
    let mut response = match response {
        Ok(r) => r,
        Err(ureq::Error::Timeout(_)) => return Err(ProviderError::Timeout { attempts: 1 }),
        Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
            return Err(ProviderError::Timeout { attempts: 1 })
        }
        Err(e) => return Err(ProviderError::Transport(e.to_string())),
    };
    let status = response.status().as_u16();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    debug!("{endpoint} -> {status} body={text}");
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| ProviderError::BadResponse(e.to_string())),
        401 | 403 => Err(ProviderError::Auth),
        429 => Err(ProviderError::RateLimit { attempts: 1 }),
        408 | 504 => Err(ProviderError::Timeout { attempts: 1 }),
        other => Err(ProviderError::Transport(format!("HTTP {other}: {text}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    /// Expected dimension; pinned from the first response when unset.
    pub dim: Option<usize>,
    pub batch_size: usize,
    pub max_concurrency: usize,
    pub max_input_chars: usize,
    pub timeout_ms: u64,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_EMBED_ENDPOINT.into(),
            model: DEFAULT_EMBED_MODEL.into(),
            dim: None,
            batch_size: 64,
            max_concurrency: 4,
            max_input_chars: 32_000,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

type BatchResult = Result<Vec<EmbeddingVector>, ProviderError>;

pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    api_key: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
    pinned_dim: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig, api_key: impl Into<String>) -> Self {
        let pinned_dim = OnceLock::new();
        if let Some(dim) = config.dim {
            let _ = pinned_dim.set(dim);
        }
        Self {
            agent: agent(Duration::from_millis(config.timeout_ms)),
            config,
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            pinned_dim,
        }
    }

    /// Reads the credential from `EMBED_API_KEY`.
    pub fn from_env(config: RemoteEmbedderConfig) -> Result<Self, ProviderError> {
        let key = std::env::var(EMBED_API_KEY_ENV).map_err(|_| ProviderError::Auth)?;
        Ok(Self::new(config, key))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn request(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body = json!({ "input": texts, "model": self.config.model });
        let response: EmbeddingResponse = self
            .retry
            .run(|_| post_json(&self.agent, &self.config.endpoint, &self.api_key, &body))?;
        if response.data.len() != texts.len() {
            return Err(ProviderError::BadResponse(format!(
                "{} embeddings for {} inputs",
                response.data.len(),
                texts.len()
            )));
        }
        let mut data = response.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        data.into_iter()
            .map(|d| {
                let actual = d.embedding.len();
                let expected = *self.pinned_dim.get_or_init(|| actual);
                if actual != expected {
                    return Err(ProviderError::DimensionMismatch { expected, actual });
                }
                EmbeddingVector::new(d.embedding).map_err(|e| ProviderError::BadResponse(e.to_string()))
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn dim(&self) -> Option<usize> {
        self.pinned_dim.get().copied()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyBatch);
        }
        let max = self.config.max_input_chars;
        if let Some((index, t)) = texts.iter().enumerate().find(|(_, t)| t.chars().count() > max) {
            return Err(ProviderError::InputTooLong {
                index,
                len: t.chars().count(),
                max,
            });
        }
        let batches: Vec<&[String]> = texts.chunks(self.config.batch_size.max(1)).collect();
        if batches.len() == 1 {
            return self.request(batches[0]);
        }
        // Workers pull batch numbers from a shared counter; at most
        // `max_concurrency` requests are in flight.
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<BatchResult>>> = Mutex::new(vec![None; batches.len()]);
        let workers = self.config.max_concurrency.clamp(1, batches.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= batches.len() {
                        break;
                    }
                    let out = self.request(batches[i]);
                    let failed = out.is_err();
                    results.lock().expect("results lock")[i] = Some(out);
                    if failed {
                        next.store(batches.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut vectors = Vec::with_capacity(texts.len());
        for slot in results.into_inner().expect("results lock") {
            match slot {
                Some(Ok(batch)) => vectors.extend(batch),
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        if vectors.len() != texts.len() {
            return Err(ProviderError::BadResponse("incomplete embedding batches".into()));
        }
        Ok(vectors)
    }

    fn with_credential(&self, key: &str) -> Option<Arc<dyn Embedder>> {
        let copy = RemoteEmbedder::new(self.config.clone(), key).with_retry(self.retry);
        if let Some(&dim) = self.pinned_dim.get() {
            let _ = copy.pinned_dim.set(dim);
        }
        Some(Arc::new(copy))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteGeneratorConfig {
    pub endpoint: String,
    pub model: String,
    pub params: GenerationParams,
    pub timeout_ms: u64,
}

impl Default for RemoteGeneratorConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_CHAT_ENDPOINT.into(),
            model: DEFAULT_CHAT_MODEL.into(),
            params: GenerationParams::default(),
            timeout_ms: 60_000,
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct RemoteGenerator {
    config: RemoteGeneratorConfig,
    api_key: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
    last_latency: Mutex<Option<Duration>>,
}

impl RemoteGenerator {
    pub fn new(config: RemoteGeneratorConfig, api_key: impl Into<String>) -> Self {
        Self {
            agent: agent(Duration::from_millis(config.timeout_ms)),
            config,
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            last_latency: Mutex::new(None),
        }
    }

    /// Reads the credential from `GEN_API_KEY`.
    pub fn from_env(config: RemoteGeneratorConfig) -> Result<Self, ProviderError> {
        let key = std::env::var(GEN_API_KEY_ENV).map_err(|_| ProviderError::Auth)?;
        Ok(Self::new(config, key))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Wall-clock time of the most recent successful call, retries included.
    pub fn last_latency(&self) -> Option<Duration> {
        *self.last_latency.lock().expect("latency lock")
    }

    /// The chat-completion request body for `prompt`.
    pub fn request_body(&self, prompt: &ComposedPrompt) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": [
                { "role": "system", "content": prompt.system_message() },
                { "role": "user", "content": prompt.user_message() },
            ],
            "temperature": self.config.params.temperature,
            "max_tokens": self.config.params.max_reply_tokens,
        })
    }
}

impl Generator for RemoteGenerator {
    fn name(&self) -> &str {
        "remote"
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn generate(&self, prompt: &ComposedPrompt) -> Result<String, ProviderError> {
        let body = self.request_body(prompt);
        let started = Instant::now();
        let response: ChatResponse = self
            .retry
            .run(|_| post_json(&self.agent, &self.config.endpoint, &self.api_key, &body))?;
        let elapsed = started.elapsed();
        *self.last_latency.lock().expect("latency lock") = Some(elapsed);
        debug!("generator {} replied in {elapsed:?}", self.config.model);
        let content = response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(ProviderError::EmptyReply);
        }
        Ok(content)
    }

    fn with_credential(&self, key: &str) -> Option<Arc<dyn Generator>> {
        Some(Arc::new(
            RemoteGenerator::new(self.config.clone(), key).with_retry(self.retry),
        ))
    }
}
