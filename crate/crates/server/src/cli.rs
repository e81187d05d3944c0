//! The `ramo` command line: ingest, build-index, serve, ask, bench.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use ramo_core::baseline::{build_tfidf, compare_latency};
use ramo_core::catalog::{load_catalog_with_stats, HeaderMap};
use ramo_core::prompting::PromptOrder;
use ramo_core::recommender::ChatSession;
use ramo_core::vecindex::build_index;

use crate::app::{ChatReply, RecommendationItem};
use crate::config::{ConfigError, EmbedderKind, GeneratorKind, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "ramo", version, about = "Conversational course recommender")]
pub struct Cli {
    /// TOML config file; RAMO_* variables and flags override it.
    #[arg(long, global = true, env = "RAMO_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean and deduplicate a course CSV, printing row counts.
    Ingest {
        csv: PathBuf,
        /// Write the cleaned catalog here.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Embed the catalog and write a .ramoidx index.
    BuildIndex {
        #[command(flatten)]
        pipeline: PipelineFlags,
        /// Output path; defaults to the configured index_path.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the HTTP chat service.
    Serve {
        #[command(flatten)]
        pipeline: PipelineFlags,
        #[arg(long, value_name = "ADDR")]
        listen: Option<String>,
        /// Allowed CORS origin; repeatable, `*` for any.
        #[arg(long = "cors-origin", value_name = "ORIGIN")]
        cors_origins: Vec<String>,
    },
    /// Ask one question and print the reply.
    Ask {
        message: String,
        /// Send the question to a running service instead of loading one.
        #[arg(long, value_name = "URL")]
        server: Option<String>,
        #[arg(long)]
        session: Option<String>,
        /// Print the full JSON response.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Time the RAG pipeline against the TF-IDF baseline.
    Bench {
        /// One query per line; blank lines and `#` comments are skipped.
        #[arg(long, value_name = "FILE")]
        queries: PathBuf,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(3..))]
        reps: u32,
        /// CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
}

/// Overrides for the pipeline settings in [`ServiceConfig`].
#[derive(Debug, Default, Args)]
pub struct PipelineFlags {
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub index: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
    #[arg(long, value_name = "URL")]
    pub embedder_endpoint: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub embedder_model: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_enum)]
    pub generator: Option<GeneratorKind>,
    #[arg(long, value_name = "URL")]
    pub generator_endpoint: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub generator_model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub token_budget: Option<usize>,
    /// template-first or question-first.
    #[arg(long)]
    pub prompt_order: Option<PromptOrder>,
    #[arg(long, value_name = "ID")]
    pub template: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub template_dir: Option<PathBuf>,
    #[arg(long)]
    pub history_turns: Option<usize>,
}

impl PipelineFlags {
    pub fn apply(&self, cfg: &mut ServiceConfig) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        fn set_opt<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
            if value.is_some() {
                *slot = value.clone();
            }
        }
        set(&mut cfg.catalog_path, &self.catalog);
        set_opt(&mut cfg.index_path, &self.index);
        set(&mut cfg.embedder.kind, &self.embedder);
        set_opt(&mut cfg.embedder.endpoint, &self.embedder_endpoint);
        set_opt(&mut cfg.embedder.model, &self.embedder_model);
        set_opt(&mut cfg.embedder.dim, &self.dim);
        set(&mut cfg.generator.kind, &self.generator);
        set_opt(&mut cfg.generator.endpoint, &self.generator_endpoint);
        set_opt(&mut cfg.generator.model, &self.generator_model);
        set(&mut cfg.generator.temperature, &self.temperature);
        set(&mut cfg.top_k, &self.top_k);
        set(&mut cfg.token_budget, &self.token_budget);
        set(&mut cfg.prompt_order, &self.prompt_order);
        set(&mut cfg.template, &self.template);
        set_opt(&mut cfg.template_dir, &self.template_dir);
        set(&mut cfg.history_turns, &self.history_turns);
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::Runtime(err)
    }
}

impl From<ConfigError> for Failure {
    fn from(err: ConfigError) -> Self {
        match err {
            ConfigError::Read { .. } => Failure::Runtime(err.into()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

/// File, then environment, then flags.
fn resolve(cli_config: &Option<PathBuf>, flags: &PipelineFlags) -> Result<ServiceConfig, Failure> {
    let mut cfg = match cli_config {
        Some(path) => ServiceConfig::from_file(path)?,
        None => ServiceConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging(&cli);
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}\n\n{}", Cli::command().render_usage());
            1
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            2
        }
    }
}

fn init_logging(cli: &Cli) {
    let base = match (&cli.command, cli.verbose) {
        (_, 2..) => "debug",
        (Command::Serve { .. }, _) | (_, 1) => "info",
        _ => "warn",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(base))
        .try_init();
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest { csv, out } => ingest(csv, out.as_ref()),
        Command::BuildIndex { pipeline, out } => {
            let cfg = resolve(&cli.config, pipeline)?;
            let Some(out) = out.clone().or(cfg.index_path.clone()) else {
                return Err(Failure::Usage("build-index needs --out or index_path".into()));
            };
            let catalog = cfg.load_catalog()?;
            let embedder = cfg.build_embedder();
            let index = build_index(&catalog, embedder.as_ref())
                .context("embedding the catalog")?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut sink = BufWriter::new(file);
            index.save(&mut sink).context("writing index")?;
            sink.flush().context("writing index")?;
            println!(
                "indexed={} dim={} embedder={} path={}",
                index.len(),
                index.dim(),
                index.embedder_name(),
                out.display()
            );
            Ok(())
        }
        Command::Serve { pipeline, listen, cors_origins } => {
            let mut cfg = resolve(&cli.config, pipeline)?;
            if let Some(listen) = listen {
                cfg.listen_address = listen.clone();
            }
            if !cors_origins.is_empty() {
                cfg.cors_allowed_origins = cors_origins.clone();
            }
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .context("starting runtime")?;
            runtime.block_on(crate::serve(cfg))?;
            Ok(())
        }
        Command::Ask { message, server: Some(url), session, json, .. } => {
            ask_remote(url, message, session.as_deref(), *json)
        }
        Command::Ask { message, server: None, session, json, pipeline } => {
            let cfg = resolve(&cli.config, pipeline)?;
            if message.trim().is_empty() {
                return Err(Failure::Usage("message is empty".into()));
            }
            let rec = cfg.build_recommender()?;
            let mut chat = ChatSession::new(session.clone().unwrap_or_else(|| "cli".into()));
            let response = rec.recommend(&mut chat, message).context("answering")?;
            if *json {
                let reply = ChatReply {
                    session_id: chat.session_id.clone(),
                    reply: response.reply,
                    recommendations: response
                        .recommendations
                        .iter()
                        .map(|r| RecommendationItem::from_parsed(r, rec.catalog()))
                        .collect(),
                    source: response.source,
                    latency_ms: response.latency.total_ms,
                };
                print_json(&reply)?;
            } else {
                println!("{}", response.reply);
            }
            Ok(())
        }
        Command::Bench { queries, reps, csv, pipeline } => {
            let cfg = resolve(&cli.config, pipeline)?;
            let text = std::fs::read_to_string(queries)
                .with_context(|| format!("reading {}", queries.display()))?;
            let queries: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect();
            if queries.is_empty() {
                return Err(anyhow::anyhow!("no queries in the file").into());
            }
            let rec = cfg.build_recommender()?;
            let tfidf = build_tfidf(rec.catalog()).context("building TF-IDF baseline")?;
            let report = compare_latency(&queries, &rec, &tfidf, *reps as usize)
                .context("running benchmark")?;
            if *csv {
                print!("{}", report.to_csv());
            } else {
                print!("{}", report.to_table());
            }
            Ok(())
        }
    }
}

fn ingest(csv: &PathBuf, out: Option<&PathBuf>) -> Result<(), Failure> {
    let started = Instant::now();
    let file = File::open(csv).with_context(|| format!("opening {}", csv.display()))?;
    let (catalog, stats) = load_catalog_with_stats(BufReader::new(file), &HeaderMap::default())
        .with_context(|| format!("loading {}", csv.display()))?;
    println!("rows={} deduped={}", stats.rows_read, catalog.len());
    eprintln!(
        "duplicates_removed={} dropped_empty_name={} fingerprint={} elapsed_ms={}",
        stats.duplicates_removed,
        stats.dropped_empty_name,
        catalog.fingerprint(),
        started.elapsed().as_millis()
    );
    if let Some(out) = out {
        let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
        let mut sink = BufWriter::new(file);
        catalog.write_csv(&mut sink, &HeaderMap::default()).context("writing catalog")?;
        sink.flush().context("writing catalog")?;
    }
    Ok(())
}

fn ask_remote(url: &str, message: &str, session: Option<&str>, json: bool) -> Result<(), Failure> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(120)))
        .build()
        .into();
    let endpoint = format!("{}/api/chat", url.trim_end_matches('/'));
    let mut body = serde_json::json!({ "message": message });
    if let Some(id) = session {
        body["session_id"] = id.into();
    }
    let mut response = agent
        .post(&endpoint)
        .send_json(&body)
        .with_context(|| format!("contacting {endpoint}"))?;
    let status = response.status();
    let text = response
        .body_mut()
        .read_to_string()
        .context("reading response")?;
    if !status.is_success() {
        let detail = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v["error"].as_str().map(str::to_string))
            .unwrap_or(text);
        return Err(anyhow::anyhow!("server answered {status}: {detail}").into());
    }
    let reply: ChatReply = serde_json::from_str(&text).context("decoding response")?;
    if json {
        print_json(&reply)?;
    } else {
        println!("{}", reply.reply);
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}
