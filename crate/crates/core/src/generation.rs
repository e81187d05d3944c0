//! Generator contract, the deterministic scripted generator, and extraction of
//! course recommendations from reply text.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::catalog::{clean_text, Catalog};
use crate::prompting::ComposedPrompt;
use crate::provider::ProviderError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_reply_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_reply_tokens: 512,
        }
    }
}

/// One composed prompt in, one reply out.
pub trait Generator: Send + Sync {
    fn name(&self) -> &str;
    fn model(&self) -> &str;
    fn generate(&self, prompt: &ComposedPrompt) -> Result<String, ProviderError>;

    /// A copy of this generator that authenticates with `key`, for
    /// generators that take credentials.
    fn with_credential(&self, _key: &str) -> Option<Arc<dyn Generator>> {
        None
    }
}

pub const SCRIPTED_PREAMBLE: &str = "Sure! Here are some recommended courses:";
pub const DONT_KNOW: &str = "I don't know";
/// Most titles the scripted generator lists when the template names no count.
pub const SCRIPTED_DEFAULT_CAP: usize = 5;

/// Deterministic stand-in for a chat model. Counts its calls.
#[derive(Debug, Default)]
pub struct ScriptedGenerator {
    calls: AtomicUsize,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Generator for ScriptedGenerator {
    fn name(&self) -> &str {
        "scripted"
    }

    fn model(&self) -> &str {
        "scripted-v1"
    }

    fn generate(&self, prompt: &ComposedPrompt) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(scripted_generate(prompt))
    }
}

/// Lists the titles of the context blocks as a numbered reply. Lists
/// `requested_count` entries when the template asks for a count, otherwise
/// every block up to [`SCRIPTED_DEFAULT_CAP`]. URL, rating, difficulty and
/// description lines in a block are echoed under its title.
pub fn scripted_generate(prompt: &ComposedPrompt) -> String {
    let blocks: Vec<Vec<(&str, &str)>> = prompt
        .context_blocks()
        .map(|block| {
            block
                .lines()
                .filter_map(|line| line.split_once(": "))
                .collect::<Vec<_>>()
        })
        .filter(|fields| fields.iter().any(|(label, _)| *label == "Title"))
        .collect();
    if blocks.is_empty() {
        return DONT_KNOW.to_string();
    }
    let wanted = prompt
        .requested_count
        .map(|n| n as usize)
        .unwrap_or(SCRIPTED_DEFAULT_CAP);
    let mut reply = String::from(SCRIPTED_PREAMBLE);
    for (n, fields) in blocks.iter().take(wanted).enumerate() {
        let get = |label: &str| fields.iter().find(|(l, _)| *l == label).map(|(_, v)| *v);
        reply.push_str(&format!("\n{}. {}", n + 1, get("Title").unwrap_or_default()));
        for (label, shown) in [
            ("URL", "URL"),
            ("Rating", "Rating"),
            ("Difficulty", "Difficulty"),
            ("Description", "Reason"),
        ] {
            if let Some(value) = get(label) {
                reply.push_str(&format!("\n   {shown}: {value}"));
            }
        }
    }
    reply
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRecommendation {
    pub course_id: Option<usize>,
    pub title_text: String,
    pub url: Option<String>,
    pub reason: Option<String>,
}

static LIST_ITEM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:\d{1,3}[.)]|[-*•])\s+(.+?)\s*$").expect("valid list pattern")
});
static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"https?://[^\s)\]>"']+"#).expect("valid url pattern"));
static DETAIL_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:[-*]\s*)?(url|link|rating|difficulty|reason|why)\s*:\s*(.*)$")
        .expect("valid detail pattern")
});

fn normalize_title(text: &str) -> String {
    clean_text(text).to_lowercase()
}

fn exact_match(title: &str, catalog: &Catalog) -> Option<usize> {
    let wanted = normalize_title(title);
    catalog
        .courses()
        .iter()
        .find(|c| !wanted.is_empty() && normalize_title(&c.name) == wanted)
        .map(|c| c.id)
}

/// Unique substring match in either direction; ambiguous matches are `None`.
fn substring_match(title: &str, catalog: &Catalog) -> Option<usize> {
    let wanted = normalize_title(title);
    if wanted.is_empty() {
        return None;
    }
    let mut candidates = catalog.courses().iter().filter(|c| {
        let name = normalize_title(&c.name);
        name.contains(&wanted) || wanted.contains(name.as_str())
    });
    match (candidates.next(), candidates.next()) {
        (Some(c), None) => Some(c.id),
        _ => None,
    }
}

/// Splits an item line into (title, trailing reason) candidates, most
/// literal first.
fn title_candidates(item: &str) -> Vec<(String, Option<String>)> {
    let stripped = URL.replace_all(item, "");
    let stripped = stripped
        .replace("**", "")
        .replace(['"', '“', '”'], "")
        .replace("()", "")
        .replace("[]", "");
    let stripped = stripped.trim().trim_end_matches([':', '-', '–']).trim().to_string();
    let mut out = vec![(stripped.clone(), None)];
    for sep in [" - ", " – ", " — ", ": "] {
        if let Some((title, rest)) = stripped.split_once(sep) {
            let rest = rest.trim();
            out.push((
                title.trim().to_string(),
                (!rest.is_empty()).then(|| rest.to_string()),
            ));
        }
    }
    out
}

pub fn parse_recommendations(reply: &str, catalog: &Catalog) -> Vec<ParsedRecommendation> {
    let mut items: Vec<ParsedRecommendation> = Vec::new();
    for line in reply.lines() {
        if let Some(caps) = DETAIL_LINE.captures(line) {
            if let Some(current) = items.last_mut() {
                let value = caps[2].trim();
                match caps[1].to_lowercase().as_str() {
                    "url" | "link" => {
                        if current.url.is_none() {
                            current.url = URL.find(value).map(|m| m.as_str().to_string());
                        }
                    }
                    "reason" | "why" if !value.is_empty() => {
                        current.reason = Some(value.to_string())
                    }
                    _ => {}
                }
                continue;
            }
        }
        if let Some(caps) = LIST_ITEM.captures(line) {
            let item = &caps[1];
            let candidates = title_candidates(item);
            // exact matches over every candidate, then substring matches
            // preferring the split (shorter) candidates
            let matched = candidates
                .iter()
                .find_map(|(title, reason)| {
                    exact_match(title, catalog).map(|id| (id, title.clone(), reason.clone()))
                })
                .or_else(|| {
                    candidates.iter().rev().find_map(|(title, reason)| {
                        substring_match(title, catalog).map(|id| (id, title.clone(), reason.clone()))
                    })
                });
            let (course_id, title_text, reason) = match matched {
                Some((id, title, reason)) => (Some(id), title, reason),
                None => {
                    let (title, reason) = candidates
                        .get(1)
                        .cloned()
                        .unwrap_or_else(|| candidates[0].clone());
                    (None, title, reason)
                }
            };
            if title_text.is_empty() {
                continue;
            }
            items.push(ParsedRecommendation {
                course_id,
                title_text,
                url: URL.find(item).map(|m| m.as_str().to_string()),
                reason,
            });
        } else if let Some(current) = items.last_mut() {
            if current.url.is_none() {
                current.url = URL.find(line).map(|m| m.as_str().to_string());
            }
        }
    }
    items
}
