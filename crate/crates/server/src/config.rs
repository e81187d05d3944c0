//! Service configuration: a TOML file, `RAMO_*` environment overrides and
//! command-line flags, applied in that order (later wins).

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use ramo_core::catalog::{load_catalog, Catalog, HeaderMap};
use ramo_core::embedding::{Embedder, HashingEmbedder};
use ramo_core::generation::{Generator, ScriptedGenerator};
use ramo_core::prompting::{builtin_templates, load_template_dir, PromptOrder, PromptTemplate};
use ramo_core::recommender::{Recommender, RecommenderConfig};
use ramo_core::remote::{
    RemoteEmbedder, RemoteEmbedderConfig, RemoteGenerator, RemoteGeneratorConfig,
    EMBED_API_KEY_ENV, GEN_API_KEY_ENV,
};
use ramo_core::vecindex::{build_index, VectorIndex};

pub const MIN_TOKEN_BUDGET: usize = 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value {value:?} for {key}: {message}")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("token_budget must be at least {MIN_TOKEN_BUDGET}, got {0}")]
    BudgetTooSmall(usize),
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("the deterministic embedder needs dim >= 8, got {0}")]
    DimTooSmall(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Deterministic,
    Remote,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSettings {
    pub kind: EmbedderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    pub kind: GeneratorKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen_address: String,
    pub catalog_path: PathBuf,
    /// Prebuilt `.ramoidx`; without one the index is built at startup.
    pub index_path: Option<PathBuf>,
    pub embedder: EmbedderSettings,
    pub generator: GeneratorSettings,
    pub top_k: usize,
    pub token_budget: usize,
    pub prompt_order: PromptOrder,
    /// Template id, looked up in `template_dir` first, then the built-ins.
    pub template: String,
    pub template_dir: Option<PathBuf>,
    pub history_turns: usize,
    /// `*` allows any origin; empty disables CORS headers.
    pub cors_allowed_origins: Vec<String>,
    pub session_ttl_secs: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let pipeline = RecommenderConfig::default();
        Self {
            listen_address: "127.0.0.1:8080".into(),
            catalog_path: "fixtures/mini_catalog.csv".into(),
            index_path: None,
            embedder: EmbedderSettings::default(),
            generator: GeneratorSettings::default(),
            top_k: pipeline.top_k,
            token_budget: pipeline.token_budget,
            prompt_order: pipeline.prompt_order,
            template: "default".into(),
            template_dir: None,
            history_turns: pipeline.history_turns,
            cors_allowed_origins: Vec::new(),
            session_ttl_secs: 60 * 60,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

fn parse_kind<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T, ConfigError> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(
        value.trim(),
    ))
    .map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Applies `RAMO_*` overrides. `lookup` is normally `std::env::var`.
    pub fn apply_env(
        &mut self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ConfigError> {
        let get = |key: &str| lookup(key).filter(|v| !v.trim().is_empty());
        if let Some(v) = get("RAMO_LISTEN_ADDRESS") {
            self.listen_address = v;
        }
        if let Some(v) = get("RAMO_CATALOG_PATH") {
            self.catalog_path = v.into();
        }
        if let Some(v) = get("RAMO_INDEX_PATH") {
            self.index_path = Some(v.into());
        }
        if let Some(v) = get("RAMO_EMBEDDER_KIND") {
            self.embedder.kind = parse_kind("RAMO_EMBEDDER_KIND", &v)?;
        }
        if let Some(v) = get("RAMO_EMBEDDER_ENDPOINT") {
            self.embedder.endpoint = Some(v);
        }
        if let Some(v) = get("RAMO_EMBEDDER_MODEL") {
            self.embedder.model = Some(v);
        }
        if let Some(v) = get("RAMO_EMBEDDER_DIM") {
            self.embedder.dim = Some(parse_value("RAMO_EMBEDDER_DIM", &v)?);
        }
        if let Some(v) = get("RAMO_GENERATOR_KIND") {
            self.generator.kind = parse_kind("RAMO_GENERATOR_KIND", &v)?;
        }
        if let Some(v) = get("RAMO_GENERATOR_ENDPOINT") {
            self.generator.endpoint = Some(v);
        }
        if let Some(v) = get("RAMO_GENERATOR_MODEL") {
            self.generator.model = Some(v);
        }
        if let Some(v) = get("RAMO_GENERATOR_TEMPERATURE") {
            self.generator.temperature = parse_value("RAMO_GENERATOR_TEMPERATURE", &v)?;
        }
        if let Some(v) = get("RAMO_TOP_K") {
            self.top_k = parse_value("RAMO_TOP_K", &v)?;
        }
        if let Some(v) = get("RAMO_TOKEN_BUDGET") {
            self.token_budget = parse_value("RAMO_TOKEN_BUDGET", &v)?;
        }
        if let Some(v) = get("RAMO_PROMPT_ORDER") {
            self.prompt_order = parse_value("RAMO_PROMPT_ORDER", &v)?;
        }
        if let Some(v) = get("RAMO_TEMPLATE") {
            self.template = v;
        }
        if let Some(v) = get("RAMO_TEMPLATE_DIR") {
            self.template_dir = Some(v.into());
        }
        if let Some(v) = get("RAMO_HISTORY_TURNS") {
            self.history_turns = parse_value("RAMO_HISTORY_TURNS", &v)?;
        }
        if let Some(v) = get("RAMO_CORS_ALLOWED_ORIGINS") {
            self.cors_allowed_origins = v
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
        }
        if let Some(v) = get("RAMO_SESSION_TTL_SECS") {
            self.session_ttl_secs = parse_value("RAMO_SESSION_TTL_SECS", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.token_budget < MIN_TOKEN_BUDGET {
            return Err(ConfigError::BudgetTooSmall(self.token_budget));
        }
        if self.top_k == 0 {
            return Err(ConfigError::ZeroTopK);
        }
        match self.embedder.dim {
            Some(dim) if dim < 8 && self.embedder.kind == EmbedderKind::Deterministic => {
                Err(ConfigError::DimTooSmall(dim))
            }
            _ => Ok(()),
        }
    }

    pub fn recommender_config(&self) -> RecommenderConfig {
        RecommenderConfig {
            top_k: self.top_k,
            token_budget: self.token_budget,
            prompt_order: self.prompt_order,
            history_turns: self.history_turns,
            ..RecommenderConfig::default()
        }
    }

    pub fn build_embedder(&self) -> Arc<dyn Embedder> {
        let settings = &self.embedder;
        match settings.kind {
            EmbedderKind::Deterministic => Arc::new(match settings.dim {
                Some(dim) => HashingEmbedder::new(dim),
                None => HashingEmbedder::default(),
            }),
            EmbedderKind::Remote => {
                let defaults = RemoteEmbedderConfig::default();
                let config = RemoteEmbedderConfig {
                    endpoint: settings.endpoint.clone().unwrap_or(defaults.endpoint.clone()),
                    model: settings.model.clone().unwrap_or(defaults.model.clone()),
                    dim: settings.dim,
                    ..defaults
                };
                Arc::new(RemoteEmbedder::new(config, api_key(EMBED_API_KEY_ENV)))
            }
        }
    }

    pub fn build_generator(&self) -> Arc<dyn Generator> {
        let settings = &self.generator;
        match settings.kind {
            GeneratorKind::Scripted => Arc::new(ScriptedGenerator::new()),
            GeneratorKind::Remote => {
                let mut config = RemoteGeneratorConfig::default();
                if let Some(endpoint) = &settings.endpoint {
                    config.endpoint = endpoint.clone();
                }
                if let Some(model) = &settings.model {
                    config.model = model.clone();
                }
                config.params.temperature = settings.temperature;
                Arc::new(RemoteGenerator::new(config, api_key(GEN_API_KEY_ENV)))
            }
        }
    }

    pub fn select_template(&self) -> anyhow::Result<PromptTemplate> {
        let mut candidates = Vec::new();
        if let Some(dir) = &self.template_dir {
            candidates = load_template_dir(dir)
                .with_context(|| format!("loading templates from {}", dir.display()))?;
        }
        candidates.extend(builtin_templates());
        candidates
            .into_iter()
            .find(|t| t.id == self.template)
            .with_context(|| format!("no template with id {:?}", self.template))
    }

    pub fn load_catalog(&self) -> anyhow::Result<Catalog> {
        let file = File::open(&self.catalog_path)
            .with_context(|| format!("opening catalog {}", self.catalog_path.display()))?;
        load_catalog(BufReader::new(file), &HeaderMap::default())
            .with_context(|| format!("loading catalog {}", self.catalog_path.display()))
    }

    /// Loads `index_path` when set, otherwise embeds the catalog now.
    pub fn load_index(
        &self,
        catalog: &Catalog,
        embedder: &dyn Embedder,
    ) -> anyhow::Result<VectorIndex> {
        let Some(path) = &self.index_path else {
            info!("no index_path configured; embedding {} courses", catalog.len());
            return Ok(build_index(catalog, embedder)?);
        };
        let file = File::open(path).with_context(|| format!("opening index {}", path.display()))?;
        let index = VectorIndex::load(BufReader::new(file))
            .with_context(|| format!("loading index {}", path.display()))?;
        if index.embedder_name() != embedder.name() {
            anyhow::bail!(
                "index {} was built with embedder {:?}, but {:?} is configured",
                path.display(),
                index.embedder_name(),
                embedder.name()
            );
        }
        Ok(index)
    }

    /// Loads everything the chat pipeline needs.
    pub fn build_recommender(&self) -> anyhow::Result<Recommender> {
        self.validate()?;
        let template = self.select_template()?;
        let catalog = Arc::new(self.load_catalog()?);
        let embedder = self.build_embedder();
        let index = Arc::new(self.load_index(&catalog, embedder.as_ref())?);
        let generator = self.build_generator();
        Ok(Recommender::new(
            catalog,
            index,
            embedder,
            generator,
            template,
            self.recommender_config(),
        )?)
    }
}

fn api_key(var: &str) -> String {
    std::env::var(var).unwrap_or_else(|_| {
        warn!("{var} is not set; requests need an X-Provider-Key header");
        String::new()
    })
}
