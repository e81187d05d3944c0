//! Exact top-k cosine search over course embeddings, and the `.ramoidx`
//! binary format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "RAMOIDX\0"
//! version    u32
//! dim        u32
//! count      u64
//! name_len   u32, embedder name (UTF-8)
//! fp_len     u32, catalog fingerprint (UTF-8)
//! checksum   u32      CRC-32 of every byte after this field
//! payload    count x (course_id u64, dim x f32)
//! ```

use std::cmp::Ordering;
use std::io::{self, Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::catalog::Catalog;
use crate::embedding::{cosine_from_parts, course_to_document, Embedder, EmbeddingVector};
use crate::provider::ProviderError;

pub const INDEX_MAGIC: &[u8; 8] = b"RAMOIDX\0";
pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const INDEX_EXTENSION: &str = "ramoidx";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("query has {query} dimensions, index has {index}")]
    DimensionMismatch { index: usize, query: usize },
    #[error("index format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("embedder failed: {0}")]
    Embedder(#[from] ProviderError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchHit {
    pub course_id: usize,
    pub score: f64,
}

/// Score descending, then course id ascending.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.course_id.cmp(&b.course_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub course_id: usize,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    embedder_name: String,
    catalog_fingerprint: String,
    entries: Vec<IndexEntry>,
    norms: Vec<f64>,
}

fn norm_f32(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

impl VectorIndex {
    pub fn from_entries(
        dim: usize,
        embedder_name: impl Into<String>,
        catalog_fingerprint: impl Into<String>,
        entries: Vec<IndexEntry>,
    ) -> Result<Self, IndexError> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if e.vector.len() != dim {
                return Err(IndexError::DimensionMismatch {
                    index: dim,
                    query: e.vector.len(),
                });
            }
            if !seen.insert(e.course_id) {
                return Err(IndexError::CorruptIndex(format!(
                    "duplicate course id {}",
                    e.course_id
                )));
            }
        }
        let norms = entries.iter().map(|e| norm_f32(&e.vector)).collect();
        Ok(Self {
            dim,
            embedder_name: embedder_name.into(),
            catalog_fingerprint: catalog_fingerprint.into(),
            entries,
            norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn embedder_name(&self) -> &str {
        &self.embedder_name
    }

    pub fn catalog_fingerprint(&self) -> &str {
        &self.catalog_fingerprint
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// The stored vector of `course_id`, widened back to f64.
    pub fn vector_of(&self, course_id: usize) -> Option<EmbeddingVector> {
        let entry = self.entries.iter().find(|e| e.course_id == course_id)?;
        EmbeddingVector::new(entry.vector.iter().map(|&x| f64::from(x)).collect()).ok()
    }

    /// Exhaustive exact top-k by cosine similarity.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                index: self.dim,
                query: query.dim(),
            });
        }
        let q = query.values();
        let q_norm = query.norm();
        let mut hits: Vec<SearchHit> = self
            .entries
            .iter()
            .zip(&self.norms)
            .map(|(entry, &norm)| {
                let mut dot = 0.0;
                for (&x, &y) in entry.vector.iter().zip(q) {
                    dot += f64::from(x) * y;
                }
                SearchHit {
                    course_id: entry.course_id,
                    score: cosine_from_parts(dot, norm, q_norm),
                }
            })
            .collect();
        let k = k.min(hits.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, hit_order);
            hits.truncate(k);
        }
        hits.sort_by(hit_order);
        Ok(hits)
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<(), IndexError> {
        let mut body = Vec::with_capacity(self.entries.len() * (8 + 4 * self.dim));
        for entry in &self.entries {
            body.extend_from_slice(&(entry.course_id as u64).to_le_bytes());
            for x in &entry.vector {
                body.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut header = Vec::new();
        header.extend_from_slice(INDEX_MAGIC);
        header.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.dim as u32).to_le_bytes());
        header.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        let mut checked = Vec::new();
        for text in [&self.embedder_name, &self.catalog_fingerprint] {
            checked.extend_from_slice(&(text.len() as u32).to_le_bytes());
            checked.extend_from_slice(text.as_bytes());
        }
        let mut crc = crc32fast::Hasher::new();
        crc.update(&header);
        crc.update(&checked);
        crc.update(&body);
        sink.write_all(&header)?;
        sink.write_all(&checked)?;
        sink.write_all(&crc.finalize().to_le_bytes())?;
        sink.write_all(&body)?;
        sink.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self, IndexError> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        let mut cursor = Cursor::new(&bytes);
        if cursor.take(8)? != INDEX_MAGIC {
            return Err(IndexError::CorruptIndex("bad magic".into()));
        }
        let version = cursor.u32()?;
        if version != INDEX_FORMAT_VERSION {
            return Err(IndexError::FormatVersionMismatch {
                found: version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        let dim = cursor.u32()? as usize;
        let count = usize::try_from(cursor.u64()?)
            .map_err(|_| IndexError::CorruptIndex("entry count overflows".into()))?;
        let embedder_name = cursor.string()?;
        let catalog_fingerprint = cursor.string()?;
        let checked_end = cursor.pos;
        let stored_crc = cursor.u32()?;
        let payload_start = cursor.pos;

        let entry_len = dim
            .checked_mul(4)
            .and_then(|n| n.checked_add(8))
            .ok_or_else(|| IndexError::CorruptIndex("dimension overflows".into()))?;
        let expected = count
            .checked_mul(entry_len)
            .ok_or_else(|| IndexError::CorruptIndex("payload size overflows".into()))?;
        if bytes.len() - payload_start != expected {
            return Err(IndexError::CorruptIndex(format!(
                "payload is {} bytes, header promises {expected}",
                bytes.len() - payload_start
            )));
        }
        let mut crc = crc32fast::Hasher::new();
        crc.update(&bytes[..checked_end]);
        crc.update(&bytes[payload_start..]);
        if crc.finalize() != stored_crc {
            return Err(IndexError::CorruptIndex("checksum mismatch".into()));
        }

        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let course_id = cursor.u64()? as usize;
            let raw = cursor.take(dim * 4)?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(IndexEntry { course_id, vector });
        }
        Self::from_entries(dim, embedder_name, catalog_fingerprint, entries)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| IndexError::CorruptIndex("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        let b = self.take(8)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(u64::from_le_bytes(arr))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| IndexError::CorruptIndex("header text is not UTF-8".into()))
    }
}

/// Embeds every course document and stores one entry per course.
pub fn build_index(catalog: &Catalog, embedder: &dyn Embedder) -> Result<VectorIndex, IndexError> {
    if catalog.is_empty() {
        return Err(IndexError::EmptyCatalog);
    }
    let documents: Vec<String> = catalog.courses().iter().map(course_to_document).collect();
    let vectors = embedder.embed_batch(&documents)?;
    if vectors.len() != documents.len() {
        return Err(IndexError::Embedder(ProviderError::BadResponse(format!(
            "{} vectors for {} documents",
            vectors.len(),
            documents.len()
        ))));
    }
    let dim = vectors[0].dim();
    let entries = catalog
        .courses()
        .iter()
        .zip(vectors)
        .map(|(course, v)| IndexEntry {
            course_id: course.id,
            vector: v.values().iter().map(|&x| x as f32).collect(),
        })
        .collect();
    VectorIndex::from_entries(dim, embedder.name(), catalog.fingerprint(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{load_catalog, HeaderMap};
    use crate::embedding::HashingEmbedder;

    fn fixture_index() -> VectorIndex {
        let catalog = load_catalog(
            include_str!("../fixtures/mini_catalog.csv").as_bytes(),
            &HeaderMap::default(),
        )
        .unwrap();
        build_index(&catalog, &HashingEmbedder::default()).unwrap()
    }

    fn saved(index: &VectorIndex) -> Vec<u8> {
        let mut buf = Vec::new();
        index.save(&mut buf).unwrap();
        buf
    }

    #[test]
    fn builds_one_entry_per_course() {
        let index = fixture_index();
        assert_eq!(index.len(), 10);
        assert_eq!(index.dim(), 256);
        assert_eq!(index.embedder_name(), "hashing-v1");
    }

    #[test]
    fn self_query_ranks_first() {
        let index = fixture_index();
        let query = index.vector_of(7).unwrap();
        let hits = index.search(&query, 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].course_id, 7);
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn k_is_capped() {
        let index = fixture_index();
        let hits = index.search(&index.vector_of(0).unwrap(), 50).unwrap();
        assert_eq!(hits.len(), 10);
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(index.search(&index.vector_of(0).unwrap(), 0).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch() {
        let index = fixture_index();
        assert!(matches!(
            index.search(&EmbeddingVector::zeros(8), 3),
            Err(IndexError::DimensionMismatch { index: 256, query: 8 })
        ));
    }

    #[test]
    fn ties_break_by_course_id() {
        let entries = (0..4)
            .map(|id| IndexEntry {
                course_id: 3 - id,
                vector: vec![1.0, 0.0],
            })
            .collect();
        let index = VectorIndex::from_entries(2, "t", "fp", entries).unwrap();
        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let ids: Vec<usize> = index.search(&q, 3).unwrap().iter().map(|h| h.course_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn round_trip_and_determinism() {
        let index = fixture_index();
        let bytes = saved(&index);
        assert_eq!(&bytes[..8], INDEX_MAGIC);
        assert_eq!(VectorIndex::load(bytes.as_slice()).unwrap(), index);
        assert_eq!(saved(&fixture_index()), bytes);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = saved(&fixture_index());
        for cut in [bytes.len() - 1, bytes.len() / 2, 30, 5] {
            assert!(
                matches!(VectorIndex::load(&bytes[..cut]), Err(IndexError::CorruptIndex(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn flipped_payload_bit_is_corrupt() {
        let mut bytes = saved(&fixture_index());
        let last = bytes.len() - 3;
        bytes[last] ^= 0x10;
        assert!(matches!(
            VectorIndex::load(bytes.as_slice()),
            Err(IndexError::CorruptIndex(msg)) if msg.contains("checksum")
        ));
    }

    #[test]
    fn future_version_rejected() {
        let mut bytes = saved(&fixture_index());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            VectorIndex::load(bytes.as_slice()),
            Err(IndexError::FormatVersionMismatch { found: 2, expected: 1 })
        ));
    }
}
