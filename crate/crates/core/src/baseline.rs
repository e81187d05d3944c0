//! Content-based baseline: TF-IDF cosine over course text, plus the latency
//! comparison against the retrieval-augmented pipeline.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Catalog, Course};
use crate::recommender::{ChatSession, Recommender};
use crate::vecindex::{hit_order, SearchHit};

pub const DEFAULT_MIN_SIMILARITY: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("no course matches the query")]
    NoMatch,
    #[error("repetitions must be at least 3, got {0}")]
    TooFewRepetitions(usize),
}

/// Lower-cased alphanumeric runs of at least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_string)
        .collect()
}

fn course_text(course: &Course) -> String {
    format!("{} {} {}", course.name, course.skills.join(" "), course.description)
}

type SparseVector = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: HashMap<String, usize>,
    idf: Vec<f64>,
    doc_vectors: Vec<(usize, SparseVector)>,
    catalog_fingerprint: String,
}

impl TfidfModel {
    pub fn build(catalog: &Catalog) -> Result<Self, BaselineError> {
        build_tfidf(catalog)
    }

    pub fn vocabulary_len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_vectors.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&i| self.idf[i])
    }

    pub fn catalog_fingerprint(&self) -> &str {
        &self.catalog_fingerprint
    }

    pub fn doc_vector(&self, course_id: usize) -> Option<&[(usize, f64)]> {
        self.doc_vectors
            .iter()
            .find(|(id, _)| *id == course_id)
            .map(|(_, v)| v.as_slice())
    }

    /// L2-normalised tf-idf vector over known terms, sorted by term index.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for token in tokenize(text) {
            if let Some(&i) = self.vocabulary.get(&token) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        weighted(counts, &self.idf)
    }

    pub fn recommend(
        &self,
        query: &str,
        k: usize,
        min_similarity: f64,
    ) -> Result<Vec<SearchHit>, BaselineError> {
        baseline_recommend(self, query, k, min_similarity)
    }
}

fn weighted(counts: HashMap<usize, f64>, idf: &[f64]) -> SparseVector {
    let mut vector: SparseVector = counts.into_iter().map(|(i, tf)| (i, tf * idf[i])).collect();
    vector.sort_by_key(|&(i, _)| i);
    let norm = vector.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in &mut vector {
            *w /= norm;
        }
    }
    vector
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// Smoothed idf `ln((1 + N) / (1 + df)) + 1` and L2-normalised tf-idf
/// vectors over course name, skills and description.
pub fn build_tfidf(catalog: &Catalog) -> Result<TfidfModel, BaselineError> {
    if catalog.is_empty() {
        return Err(BaselineError::EmptyCatalog);
    }
    let mut vocabulary: HashMap<String, usize> = HashMap::new();
    let mut doc_freq: Vec<usize> = Vec::new();
    let mut doc_counts = Vec::with_capacity(catalog.len());
    for course in catalog.courses() {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for token in tokenize(&course_text(course)) {
            let next = vocabulary.len();
            let i = *vocabulary.entry(token).or_insert(next);
            if i == doc_freq.len() {
                doc_freq.push(0);
            }
            *counts.entry(i).or_default() += 1.0;
        }
        for &i in counts.keys() {
            doc_freq[i] += 1;
        }
        doc_counts.push((course.id, counts));
    }
    let n = catalog.len() as f64;
    let idf: Vec<f64> = doc_freq
        .iter()
        .map(|&df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0)
        .collect();
    let doc_vectors = doc_counts
        .into_iter()
        .map(|(id, counts)| (id, weighted(counts, &idf)))
        .collect();
    Ok(TfidfModel {
        vocabulary,
        idf,
        doc_vectors,
        catalog_fingerprint: catalog.fingerprint().to_string(),
    })
}

/// Top-k courses by tf-idf cosine with score at least `min_similarity`.
/// `NoMatch` when the query shares no vocabulary with the catalog or nothing
/// clears the threshold.
pub fn baseline_recommend(
    model: &TfidfModel,
    query: &str,
    k: usize,
    min_similarity: f64,
) -> Result<Vec<SearchHit>, BaselineError> {
    let q = model.vectorize(query);
    if q.is_empty() {
        return Err(BaselineError::NoMatch);
    }
    let mut hits: Vec<SearchHit> = model
        .doc_vectors
        .iter()
        .map(|(id, v)| SearchHit {
            course_id: *id,
            score: sparse_dot(&q, v).clamp(-1.0, 1.0),
        })
        .filter(|h| h.score >= min_similarity)
        .collect();
    if hits.is_empty() {
        return Err(BaselineError::NoMatch);
    }
    hits.sort_by(hit_order);
    hits.truncate(k);
    Ok(hits)
}

/// Per-query median timings, or the error the engine reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub query: String,
    pub rag_ms: Result<f64, String>,
    pub baseline_ms: Result<f64, String>,
}

impl LatencyRow {
    pub fn delta_ms(&self) -> Option<f64> {
        match (&self.rag_ms, &self.baseline_ms) {
            (Ok(rag), Ok(base)) => Some(base - rag),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub repetitions: usize,
    pub rows: Vec<LatencyRow>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len().is_multiple_of(2) {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    })
}

fn fmt_cell(cell: &Result<f64, String>) -> String {
    match cell {
        Ok(v) => format!("{v:.3}"),
        Err(e) => e.clone(),
    }
}

impl LatencyReport {
    pub fn median_rag_ms(&self) -> Option<f64> {
        median(&mut self.rows.iter().filter_map(|r| r.rag_ms.clone().ok()).collect::<Vec<_>>())
    }

    pub fn median_baseline_ms(&self) -> Option<f64> {
        median(
            &mut self
                .rows
                .iter()
                .filter_map(|r| r.baseline_ms.clone().ok())
                .collect::<Vec<_>>(),
        )
    }

    pub fn median_delta_ms(&self) -> Option<f64> {
        median(&mut self.rows.iter().filter_map(LatencyRow::delta_ms).collect::<Vec<_>>())
    }

    fn cells(&self) -> Vec<[String; 4]> {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        let mut rows: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.query.clone(),
                    fmt_cell(&r.rag_ms),
                    fmt_cell(&r.baseline_ms),
                    opt(r.delta_ms()),
                ]
            })
            .collect();
        rows.push([
            "MEDIAN".to_string(),
            opt(self.median_rag_ms()),
            opt(self.median_baseline_ms()),
            opt(self.median_delta_ms()),
        ]);
        rows
    }

    /// Aligned plain-text table with a trailing summary row.
    pub fn to_table(&self) -> String {
        let header = ["query", "rag_ms", "baseline_ms", "delta_ms"].map(String::from);
        let rows = self.cells();
        let mut widths = header.clone().map(|h| h.chars().count());
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[String; 4]| {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                row[0],
                row[1],
                row[2],
                row[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        };
        line(&mut out, &header);
        let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 6));
        for row in &rows {
            line(&mut out, row);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["query", "rag_ms", "baseline_ms", "delta_ms"])
            .expect("in-memory write");
        for row in self.cells() {
            writer.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

/// Median latency of each query through both engines. The RAG column covers
/// embedding, search and prompt construction; generator time is excluded.
/// Engine errors are recorded in the row rather than aborting the run.
pub fn compare_latency(
    queries: &[String],
    rag: &Recommender,
    baseline: &TfidfModel,
    repetitions: usize,
) -> Result<LatencyReport, BaselineError> {
    if repetitions < 3 {
        return Err(BaselineError::TooFewRepetitions(repetitions));
    }
    let k = rag.config().top_k;
    let mut rows = Vec::with_capacity(queries.len());
    for query in queries {
        let session = ChatSession::new("bench");
        let mut rag_times = Vec::with_capacity(repetitions);
        let mut rag_error = None;
        let mut base_times = Vec::with_capacity(repetitions);
        let mut base_error = None;
        for _ in 0..repetitions {
            let started = Instant::now();
            match rag.prepare(&session, query, rag.embedder().as_ref()) {
                Ok(_) => rag_times.push(started.elapsed().as_secs_f64() * 1000.0),
                Err(e) => rag_error = Some(e.to_string()),
            }
            let started = Instant::now();
            match baseline_recommend(baseline, query, k, DEFAULT_MIN_SIMILARITY) {
                Ok(_) => base_times.push(started.elapsed().as_secs_f64() * 1000.0),
                Err(BaselineError::NoMatch) => base_error = Some("NoMatch".to_string()),
                Err(e) => base_error = Some(e.to_string()),
            }
        }
        rows.push(LatencyRow {
            query: query.clone(),
            rag_ms: rag_error.map_or_else(|| Ok(median(&mut rag_times).unwrap_or(0.0)), Err),
            baseline_ms: base_error
                .map_or_else(|| Ok(median(&mut base_times).unwrap_or(0.0)), Err),
        });
    }
    Ok(LatencyReport { repetitions, rows })
}
