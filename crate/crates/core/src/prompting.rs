//! Prompt templates, context rendering, prompt composition and token budgets.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::vecindex::{hit_order, SearchHit};

pub const CONTEXT_PLACEHOLDER: &str = "{context}";
pub const QUESTION_PLACEHOLDER: &str = "{question}";
const PARAGRAPH_BREAK: &str = "\n\n";

/// GPT-3.5 Turbo context window.
pub const DEFAULT_TOKEN_BUDGET: usize = 4096;
pub const GPT4_TOKEN_BUDGET: usize = 8192;
pub const LLAMA3_TOKEN_BUDGET: usize = 8000;
/// Tokens held back from the prompt for the generator's reply.
pub const REPLY_RESERVE_TOKENS: usize = 512;

const DEFAULT_TEMPLATE_FILE: &str = include_str!("../templates/default.txt");
const BUILTIN_TEMPLATE_FILES: [&str; 4] = [
    DEFAULT_TEMPLATE_FILE,
    include_str!("../templates/three_titles.txt"),
    include_str!("../templates/titles_urls.txt"),
    include_str!("../templates/reasons.txt"),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("template and question need {required} tokens, budget is {budget}")]
    BudgetTooSmall { required: usize, budget: usize },
    #[error("unknown course id {0}")]
    UnknownCourseId(usize),
    #[error("template must contain {placeholder} exactly once (found {count})")]
    Placeholder { placeholder: &'static str, count: usize },
    #[error("invalid template header: {0}")]
    Header(String),
    #[error("unknown detail field: {0}")]
    UnknownField(String),
    #[error("failed to read templates: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetailField {
    Title,
    Url,
    Rating,
    Difficulty,
    Reason,
}

impl DetailField {
    /// Label used in rendered context blocks.
    pub fn label(self) -> &'static str {
        match self {
            DetailField::Title => "Title",
            DetailField::Url => "URL",
            DetailField::Rating => "Rating",
            DetailField::Difficulty => "Difficulty",
            DetailField::Reason => "Description",
        }
    }
}

impl FromStr for DetailField {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "title" => Ok(DetailField::Title),
            "url" => Ok(DetailField::Url),
            "rating" => Ok(DetailField::Rating),
            "difficulty" => Ok(DetailField::Difficulty),
            "reason" | "description" => Ok(DetailField::Reason),
            other => Err(PromptError::UnknownField(other.to_string())),
        }
    }
}

pub type DetailFields = BTreeSet<DetailField>;

pub fn title_only() -> DetailFields {
    BTreeSet::from([DetailField::Title])
}

/// Order in which the three prompt parts are serialized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptOrder {
    /// Instructions, retrieved context, then the user question.
    #[default]
    TemplateFirst,
    /// The user question, then instructions and context.
    QuestionFirst,
}

impl FromStr for PromptOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "template-first" | "template" => Ok(PromptOrder::TemplateFirst),
            "question-first" | "question" => Ok(PromptOrder::QuestionFirst),
            other => Err(format!("unknown prompt order {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    body: String,
    pub requested_count: Option<u32>,
    pub detail_fields: DetailFields,
}

static REQUESTED_COUNT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\brecommend\s+(\d+|one|two|three|four|five|six|seven|eight|nine|ten)\s+courses?\b",
    )
    .expect("valid count pattern")
});

/// Extracts "recommend N courses" from template text.
pub fn parse_requested_count(text: &str) -> Option<u32> {
    let caps = REQUESTED_COUNT.captures(text)?;
    let word = caps[1].to_lowercase();
    let n = match word.as_str() {
        "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        digits => digits.parse().ok()?,
    };
    (n >= 1).then_some(n)
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        body: impl Into<String>,
        detail_fields: DetailFields,
    ) -> Result<Self, PromptError> {
        let body = body.into();
        for placeholder in [CONTEXT_PLACEHOLDER, QUESTION_PLACEHOLDER] {
            let count = body.matches(placeholder).count();
            if count != 1 {
                return Err(PromptError::Placeholder { placeholder, count });
            }
        }
        let requested_count = parse_requested_count(&body);
        let detail_fields = if detail_fields.is_empty() {
            title_only()
        } else {
            detail_fields
        };
        Ok(Self {
            id: id.into(),
            body,
            requested_count,
            detail_fields,
        })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// The instruction text: every paragraph that holds no placeholder.
    pub fn instructions(&self) -> String {
        self.body
            .split(PARAGRAPH_BREAK)
            .filter(|p| !p.contains(CONTEXT_PLACEHOLDER) && !p.contains(QUESTION_PLACEHOLDER))
            .collect::<Vec<_>>()
            .join(PARAGRAPH_BREAK)
    }

    /// Parses a template file: a `---` delimited header of `key: value` lines
    /// (`id`, `detail_fields`, optional `requested_count`) followed by the body.
    pub fn from_file_contents(text: &str) -> Result<Self, PromptError> {
        let text = text.strip_prefix('\u{FEFF}').unwrap_or(text);
        let rest = text
            .strip_prefix("---\n")
            .ok_or_else(|| PromptError::Header("missing opening ---".into()))?;
        let end = rest
            .find("\n---\n")
            .ok_or_else(|| PromptError::Header("missing closing ---".into()))?;
        let (header, body) = (&rest[..end], &rest[end + 5..]);
        let body = body.strip_suffix('\n').unwrap_or(body);

        let mut id = None;
        let mut fields = DetailFields::new();
        let mut count_override = None;
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| PromptError::Header(format!("expected key: value, got {line:?}")))?;
            let value = value.trim();
            match key.trim() {
                "id" => id = Some(value.to_string()),
                "detail_fields" => {
                    for f in value.split(',').filter(|f| !f.trim().is_empty()) {
                        fields.insert(f.parse()?);
                    }
                }
                "requested_count" => {
                    let n: u32 = value
                        .parse()
                        .map_err(|_| PromptError::Header(format!("bad requested_count {value:?}")))?;
                    if n == 0 {
                        return Err(PromptError::Header("requested_count must be >= 1".into()));
                    }
                    count_override = Some(n);
                }
                other => return Err(PromptError::Header(format!("unknown key {other:?}"))),
            }
        }
        let id = id.ok_or_else(|| PromptError::Header("missing id".into()))?;
        let mut template = Self::new(id, body, fields)?;
        if count_override.is_some() {
            template.requested_count = count_override;
        }
        Ok(template)
    }
}

/// The default recommender template.
pub fn default_template() -> PromptTemplate {
    PromptTemplate::from_file_contents(DEFAULT_TEMPLATE_FILE).expect("embedded template is valid")
}

/// The default template plus the count- and detail-varying templates.
pub fn builtin_templates() -> Vec<PromptTemplate> {
    BUILTIN_TEMPLATE_FILES
        .iter()
        .map(|t| PromptTemplate::from_file_contents(t).expect("embedded template is valid"))
        .collect()
}

/// Loads every `*.txt` template in `dir`, sorted by file name.
pub fn load_template_dir(dir: &Path) -> Result<Vec<PromptTemplate>, PromptError> {
    let io = |e: std::io::Error| PromptError::Io(format!("{}: {e}", dir.display()));
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(io)?;
            PromptTemplate::from_file_contents(&text)
        })
        .collect()
}

fn format_rating(rating: Option<f64>) -> String {
    rating
        .map(|r| r.to_string())
        .unwrap_or_else(|| "unrated".to_string())
}

/// One labeled block per hit, blank-line separated, in hit order.
pub fn render_context(
    hits: &[SearchHit],
    catalog: &Catalog,
    fields: &DetailFields,
) -> Result<String, PromptError> {
    let mut blocks = Vec::with_capacity(hits.len());
    for hit in hits {
        let course = catalog
            .get(hit.course_id)
            .ok_or(PromptError::UnknownCourseId(hit.course_id))?;
        let lines: Vec<String> = fields
            .iter()
            .map(|&field| {
                let value = match field {
                    DetailField::Title => course.name.clone(),
                    DetailField::Url => course.url.clone(),
                    DetailField::Rating => format_rating(course.rating),
                    DetailField::Difficulty => course.difficulty.to_string(),
                    DetailField::Reason => course.description.clone(),
                };
                format!("{}: {}", field.label(), value)
            })
            .collect();
        blocks.push(lines.join("\n"));
    }
    Ok(blocks.join(PARAGRAPH_BREAK))
}

/// Characters / 4, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Paragraph {
    Static(String),
    Slot(String),
}

/// The three-part generator input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedPrompt {
    pub template_part: String,
    pub context_part: String,
    pub question_part: String,
    pub estimated_tokens: usize,
    pub requested_count: Option<u32>,
    pub order: PromptOrder,
    paragraphs: Vec<Paragraph>,
}

fn substitute(paragraph: &str, context: &str, question: &str) -> String {
    let mut out = String::with_capacity(paragraph.len() + context.len() + question.len());
    let mut rest = paragraph;
    loop {
        let next_context = rest.find(CONTEXT_PLACEHOLDER);
        let next_question = rest.find(QUESTION_PLACEHOLDER);
        let (pos, placeholder, value) = match (next_context, next_question) {
            (Some(c), Some(q)) if c < q => (c, CONTEXT_PLACEHOLDER, context),
            (_, Some(q)) => (q, QUESTION_PLACEHOLDER, question),
            (Some(c), None) => (c, CONTEXT_PLACEHOLDER, context),
            (None, None) => break,
        };
        out.push_str(&rest[..pos]);
        out.push_str(value);
        rest = &rest[pos + placeholder.len()..];
    }
    out.push_str(rest);
    out
}

impl ComposedPrompt {
    /// The full generator input in the configured order.
    pub fn serialize(&self) -> String {
        let render = |p: &Paragraph| match p {
            Paragraph::Static(text) => text.clone(),
            Paragraph::Slot(text) => substitute(text, &self.context_part, &self.question_part),
        };
        let ordered: Vec<&Paragraph> = match self.order {
            PromptOrder::TemplateFirst => self.paragraphs.iter().collect(),
            PromptOrder::QuestionFirst => {
                let is_question = |p: &&Paragraph| {
                    matches!(p, Paragraph::Slot(t) if t.contains(QUESTION_PLACEHOLDER))
                };
                let mut out: Vec<&Paragraph> = self.paragraphs.iter().filter(is_question).collect();
                out.extend(self.paragraphs.iter().filter(|p| !is_question(p)));
                out
            }
        };
        ordered.into_iter().map(render).collect::<Vec<_>>().join(PARAGRAPH_BREAK)
    }

    /// Instruction text, sent as the system message.
    pub fn system_message(&self) -> &str {
        &self.template_part
    }

    /// Context and question paragraphs, sent as the user message.
    pub fn user_message(&self) -> String {
        self.paragraphs
            .iter()
            .filter_map(|p| match p {
                Paragraph::Slot(t) => Some(substitute(t, &self.context_part, &self.question_part)),
                Paragraph::Static(_) => None,
            })
            .collect::<Vec<_>>()
            .join(PARAGRAPH_BREAK)
    }

    /// Context blocks as rendered by [`render_context`].
    pub fn context_blocks(&self) -> impl Iterator<Item = &str> {
        self.context_part
            .split(PARAGRAPH_BREAK)
            .map(str::trim)
            .filter(|b| !b.is_empty())
    }
}

pub fn compose_prompt(
    template: &PromptTemplate,
    context: &str,
    question: &str,
) -> Result<ComposedPrompt, PromptError> {
    compose_prompt_ordered(template, context, question, PromptOrder::default())
}

pub fn compose_prompt_ordered(
    template: &PromptTemplate,
    context: &str,
    question: &str,
    order: PromptOrder,
) -> Result<ComposedPrompt, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let paragraphs = template
        .body
        .split(PARAGRAPH_BREAK)
        .map(|p| {
            if p.contains(CONTEXT_PLACEHOLDER) || p.contains(QUESTION_PLACEHOLDER) {
                Paragraph::Slot(p.to_string())
            } else {
                Paragraph::Static(p.to_string())
            }
        })
        .collect();
    let mut prompt = ComposedPrompt {
        template_part: template.instructions(),
        context_part: context.to_string(),
        question_part: question.to_string(),
        estimated_tokens: 0,
        requested_count: template.requested_count,
        order,
        paragraphs,
    };
    prompt.estimated_tokens = estimate_tokens(&prompt.serialize());
    Ok(prompt)
}

/// A prompt trimmed to a token budget, with the hits whose context survived.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPrompt {
    pub prompt: ComposedPrompt,
    pub hits: Vec<SearchHit>,
}

/// Drops the lowest-scored hits one at a time until the prompt fits in
/// `budget` tokens. The template and question are never cut.
pub fn fit_to_budget(
    prompt: &ComposedPrompt,
    hits: &[SearchHit],
    catalog: &Catalog,
    template: &PromptTemplate,
    budget: usize,
) -> Result<FittedPrompt, PromptError> {
    let compose = |context: &str| {
        compose_prompt_ordered(template, context, &prompt.question_part, prompt.order)
    };
    let bare = compose("")?;
    if bare.estimated_tokens > budget {
        return Err(PromptError::BudgetTooSmall {
            required: bare.estimated_tokens,
            budget,
        });
    }
    if prompt.estimated_tokens <= budget {
        return Ok(FittedPrompt {
            prompt: prompt.clone(),
            hits: hits.to_vec(),
        });
    }
    let mut surviving = hits.to_vec();
    while !surviving.is_empty() {
        let worst = surviving
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| hit_order(a, b))
            .map(|(i, _)| i)
            .expect("non-empty");
        surviving.remove(worst);
        let context = render_context(&surviving, catalog, &template.detail_fields)?;
        let candidate = compose(&context)?;
        if candidate.estimated_tokens <= budget {
            return Ok(FittedPrompt {
                prompt: candidate,
                hits: surviving,
            });
        }
    }
    Ok(FittedPrompt {
        prompt: bare,
        hits: surviving,
    })
}

impl fmt::Display for ComposedPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}
