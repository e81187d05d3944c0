//! Course catalog ingestion: cleaning, parsing, deduplication and default ordering.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("catalog is empty after cleaning")]
    EmptyCatalog,
    #[error("malformed CSV record at line {line}: {message}")]
    MalformedCsv { line: u64, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CatalogError>;

/// Course difficulty level. The derived ordering is the "easiest first" order
/// used for default recommendations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Beginner,
    Intermediate,
    Advanced,
    Conversant,
    Unrated,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Beginner => "Beginner",
            Difficulty::Intermediate => "Intermediate",
            Difficulty::Advanced => "Advanced",
            Difficulty::Conversant => "Conversant",
            Difficulty::Unrated => "Unrated",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Course {
    pub id: usize,
    pub name: String,
    pub university: String,
    pub difficulty: Difficulty,
    pub rating: Option<f64>,
    pub url: String,
    pub description: String,
    pub skills: Vec<String>,
}

impl Course {
    fn dedupe_key(&self) -> (String, String, String) {
        (
            normalize_key(&self.name),
            normalize_key(&self.university),
            normalize_key(&self.description),
        )
    }
}

/// Maps the seven logical course fields onto actual CSV header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeaderMap {
    pub name: String,
    pub university: String,
    pub difficulty: String,
    pub rating: String,
    pub url: String,
    pub description: String,
    pub skills: String,
}

impl Default for HeaderMap {
    fn default() -> Self {
        Self {
            name: "Course Name".into(),
            university: "University".into(),
            difficulty: "Difficulty Level".into(),
            rating: "Course Rating".into(),
            url: "Course URL".into(),
            description: "Course Description".into(),
            skills: "Skills".into(),
        }
    }
}

impl HeaderMap {
    /// The shorter column labels ("Rating", "URL", "Description").
    pub fn short_labels() -> Self {
        Self {
            rating: "Rating".into(),
            url: "URL".into(),
            description: "Description".into(),
            ..Self::default()
        }
    }

    fn columns(&self) -> [&str; 7] {
        [
            &self.name,
            &self.university,
            &self.difficulty,
            &self.rating,
            &self.url,
            &self.description,
            &self.skills,
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub rows_read: usize,
    pub duplicates_removed: usize,
    pub dropped_empty_name: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    courses: Vec<Course>,
    source_fingerprint: String,
}

impl Catalog {
    /// Builds a catalog from already-cleaned courses, reassigning ids in order
    /// and dropping duplicates.
    pub fn from_courses(courses: Vec<Course>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(courses.len());
        for mut course in courses {
            if course.name.is_empty() || !seen.insert(course.dedupe_key()) {
                continue;
            }
            course.id = kept.len();
            kept.push(course);
        }
        if kept.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }
        let source_fingerprint = fingerprint(&kept);
        Ok(Self {
            courses: kept,
            source_fingerprint,
        })
    }

    pub fn courses(&self) -> &[Course] {
        &self.courses
    }

    pub fn get(&self, id: usize) -> Option<&Course> {
        self.courses.get(id)
    }

    pub fn len(&self) -> usize {
        self.courses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.courses.is_empty()
    }

    pub fn fingerprint(&self) -> &str {
        &self.source_fingerprint
    }

    /// Writes the catalog as CSV using the given header names. Skills are
    /// joined with ", " so they split back losslessly.
    pub fn write_csv<W: Write>(&self, sink: W, headers: &HeaderMap) -> Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        let to_io = |e: csv::Error| CatalogError::Io(std::io::Error::other(e));
        writer.write_record(headers.columns()).map_err(to_io)?;
        for c in &self.courses {
            let rating = c
                .rating
                .map(|r| r.to_string())
                .unwrap_or_else(|| "Not Calibrated".to_string());
            let difficulty = match c.difficulty {
                Difficulty::Unrated => "Not Calibrated",
                d => d.as_str(),
            };
            writer
                .write_record([
                    c.name.as_str(),
                    c.university.as_str(),
                    difficulty,
                    rating.as_str(),
                    c.url.as_str(),
                    c.description.as_str(),
                    c.skills.join(", ").as_str(),
                ])
                .map_err(to_io)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn fingerprint(courses: &[Course]) -> String {
    let mut hasher = Sha256::new();
    for c in courses {
        let rating = c.rating.map(|r| r.to_string()).unwrap_or_default();
        for field in [
            c.name.as_str(),
            c.university.as_str(),
            c.difficulty.as_str(),
            rating.as_str(),
            c.url.as_str(),
            c.description.as_str(),
        ] {
            hasher.update(field.as_bytes());
            hasher.update([0x1f]);
        }
        for skill in &c.skills {
            hasher.update(skill.as_bytes());
            hasher.update([0x1e]);
        }
        hasher.update([0x1d]);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn is_allowed(c: char) -> bool {
    c.is_alphanumeric() || c.is_whitespace() || ".,:;!?'\"()&+/%-".contains(c)
}

/// Removes control and replacement characters, replaces any other symbol
/// outside letters, digits and common punctuation with a space, then
/// collapses whitespace runs and trims.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars() {
        if c.is_control() && !c.is_whitespace() || c == '\u{FFFD}' {
            continue;
        }
        if c.is_whitespace() || !is_allowed(c) {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

fn normalize_key(text: &str) -> String {
    clean_text(text).to_lowercase()
}

/// Parses a rating cell; non-numeric or out-of-range values are absent.
pub fn parse_rating(raw: &str) -> Option<f64> {
    let value: f64 = raw.trim().parse().ok()?;
    (value.is_finite() && (0.0..=5.0).contains(&value)).then_some(value)
}

pub fn parse_difficulty(raw: &str) -> Difficulty {
    match raw.trim().to_lowercase().as_str() {
        "beginner" => Difficulty::Beginner,
        "intermediate" => Difficulty::Intermediate,
        "advanced" => Difficulty::Advanced,
        "conversant" => Difficulty::Conversant,
        _ => Difficulty::Unrated,
    }
}

static SKILL_SEPARATOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s{2,}|,").expect("valid skill separator"));

/// Splits a raw skills cell on commas and runs of two or more whitespace
/// characters. A cell without separators becomes a single skill.
pub fn split_skills(raw: &str) -> Vec<String> {
    SKILL_SEPARATOR
        .split(raw)
        .map(clean_text)
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn load_catalog<R: Read>(source: R, headers: &HeaderMap) -> Result<Catalog> {
    load_catalog_with_stats(source, headers).map(|(catalog, _)| catalog)
}

pub fn load_catalog_with_stats<R: Read>(
    source: R,
    headers: &HeaderMap,
) -> Result<(Catalog, LoadStats)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let header_row = reader
        .headers()
        .map_err(|e| malformed(&e))?
        .iter()
        .map(|h| h.trim_start_matches('\u{FEFF}').trim().to_string())
        .collect::<Vec<_>>();
    let mut positions = [0usize; 7];
    for (slot, name) in positions.iter_mut().zip(headers.columns()) {
        *slot = header_row
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CatalogError::MissingColumn(name.to_string()))?;
    }
    let [name, university, difficulty, rating, url, description, skills] = positions;

    let mut stats = LoadStats::default();
    let mut courses = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(&e))?;
        stats.rows_read += 1;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let course = Course {
            id: 0,
            name: clean_text(cell(name)),
            university: clean_text(cell(university)),
            difficulty: parse_difficulty(&clean_text(cell(difficulty))),
            rating: parse_rating(&clean_text(cell(rating))),
            url: clean_text(cell(url)),
            description: clean_text(cell(description)),
            skills: split_skills(cell(skills)),
        };
        if course.name.is_empty() {
            stats.dropped_empty_name += 1;
            continue;
        }
        courses.push(course);
    }
    let candidates = courses.len();
    let catalog = Catalog::from_courses(courses)?;
    stats.duplicates_removed = candidates - catalog.len();
    Ok((catalog, stats))
}

fn malformed(err: &csv::Error) -> CatalogError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    CatalogError::MalformedCsv {
        line,
        message: err.to_string(),
    }
}

fn default_order(a: &Course, b: &Course) -> Ordering {
    let by_rating = match (a.rating, b.rating) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_rating
        .then(a.difficulty.cmp(&b.difficulty))
        .then_with(|| a.name.cmp(&b.name))
        .then(a.id.cmp(&b.id))
}

/// The `k` best-rated courses: rating descending (unrated last), then
/// easiest difficulty, then name.
pub fn top_rated(catalog: &Catalog, k: usize) -> Vec<&Course> {
    let mut ordered: Vec<&Course> = catalog.courses.iter().collect();
    ordered.sort_by(|a, b| default_order(a, b));
    ordered.truncate(k);
    ordered
}
