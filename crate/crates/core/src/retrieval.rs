//! Exhaustive embedding index with label-level max-similarity scoring.
//!
//! Every stored and query vector is L2-normalized, so the dot product used
//! for scoring is a cosine similarity in `[-1, 1]`. A label's score is the
//! maximum similarity between the query and any stored sample carrying that
//! label.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{embed, sha256_hex, BackendError, EmbeddingBackend};
use crate::label::{parse_label, CompositeLabel};
use crate::par;
use crate::ranking::ScoredRanking;
use crate::record::{DatasetRecord, LabelSpace};

pub const DEFAULT_TOP_K: usize = 10;

const MAGIC: &[u8; 8] = b"MSCIDX01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot build an index from zero records")]
    EmptyIndex,
    #[error("embedding backend failed for instance {instance_id}: {source}")]
    Backend {
        instance_id: String,
        #[source]
        source: BackendError,
    },
    #[error("record {position} ({instance_id}): embedding dimension {got}, expected {expected}")]
    RecordDimension {
        position: usize,
        instance_id: String,
        expected: usize,
        got: usize,
    },
    #[error("query dimension {got} does not match index dimension {expected}")]
    QueryDimension { expected: usize, got: usize },
    #[error("vector cannot be normalized (zero or non-finite norm)")]
    Degenerate,
    #[error("index file: {0}")]
    Format(String),
    #[error("index io: {0}")]
    Io(#[from] io::Error),
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// L2-normalizes `values`. Fails on zero or non-finite input.
    pub fn normalized(values: Vec<f64>) -> Result<Self, RetrievalError> {
        let mut values = values;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::Degenerate);
        }
        let norm = dot(&values, &values).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(RetrievalError::Degenerate);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(EmbeddingVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Dot product as a left-to-right fold over coordinates.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub embedding: EmbeddingVector,
    pub label: CompositeLabel,
    pub source_instance_id: String,
}

/// Immutable embedded dataset backing retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    entries: Vec<IndexEntry>,
    dimension: usize,
    space: LabelSpace,
    /// Position of each entry's label within `space`.
    label_slots: Vec<usize>,
    embedder_id: String,
}

impl EmbeddedDataset {
    pub fn from_entries(
        entries: Vec<IndexEntry>,
        embedder_id: impl Into<String>,
    ) -> Result<Self, RetrievalError> {
        let first = entries.first().ok_or(RetrievalError::EmptyIndex)?;
        let dimension = first.embedding.dimension();
        if dimension == 0 {
            return Err(RetrievalError::Degenerate);
        }
        for (position, e) in entries.iter().enumerate() {
            if e.embedding.dimension() != dimension {
                return Err(RetrievalError::RecordDimension {
                    position,
                    instance_id: e.source_instance_id.clone(),
                    expected: dimension,
                    got: e.embedding.dimension(),
                });
            }
        }
        let space = LabelSpace::from_labels(entries.iter().map(|e| e.label.clone()))
            .map_err(|_| RetrievalError::EmptyIndex)?;
        let label_slots = entries
            .iter()
            .map(|e| {
                space
                    .labels()
                    .binary_search(&e.label)
                    .expect("label drawn from entries")
            })
            .collect();
        Ok(EmbeddedDataset {
            entries,
            dimension,
            space,
            label_slots,
            embedder_id: embedder_id.into(),
        })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }
}

/// Embeds every record (one backend request each, up to `workers` at a
/// time) and assembles entries in input order.
pub fn build_index(
    records: &[DatasetRecord],
    embedder: &dyn EmbeddingBackend,
    workers: usize,
) -> Result<EmbeddedDataset, RetrievalError> {
    if records.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let vectors = par::map_ordered(records, workers, |r| {
        embed(&[r.triplet.embedding_text()], embedder)
            .map(|mut v| v.remove(0))
            .map_err(|source| RetrievalError::Backend {
                instance_id: r.instance_id().to_string(),
                source,
            })
    });
    let mut entries = Vec::with_capacity(records.len());
    let mut expected = None;
    for (position, (record, vector)) in records.iter().zip(vectors).enumerate() {
        let vector = vector?;
        let expected = *expected.get_or_insert(vector.len());
        if vector.len() != expected {
            return Err(RetrievalError::RecordDimension {
                position,
                instance_id: record.instance_id().to_string(),
                expected,
                got: vector.len(),
            });
        }
        entries.push(IndexEntry {
            embedding: EmbeddingVector::normalized(vector)?,
            label: record.label.clone(),
            source_instance_id: record.instance_id().to_string(),
        });
    }
    EmbeddedDataset::from_entries(entries, embedder.id())
}

/// Label-level retrieval scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScoreTable {
    scores: BTreeMap<CompositeLabel, f64>,
}

impl LabelScoreTable {
    pub fn from_map(scores: BTreeMap<CompositeLabel, f64>) -> Self {
        LabelScoreTable { scores }
    }

    pub fn get(&self, label: &CompositeLabel) -> Option<f64> {
        self.scores.get(label).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CompositeLabel, f64)> {
        self.scores.iter().map(|(l, s)| (l, *s))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// All labels as a ranking.
    pub fn ranking(&self) -> ScoredRanking {
        ScoredRanking::from_scores(self.iter().map(|(l, s)| (l.clone(), s)))
            .expect("finite distinct scores")
    }
}

/// Score given to a label whose every sample was excluded from scoring.
pub const EXCLUDED_LABEL_SCORE: f64 = -1.0;

pub fn score_labels(
    query: &EmbeddingVector,
    index: &EmbeddedDataset,
) -> Result<LabelScoreTable, RetrievalError> {
    score_labels_excluding(query, index, None)
}

/// Like [`score_labels`], skipping entries whose source instance equals
/// `exclude_instance_id` (leave-one-out evaluation on training rows).
pub fn score_labels_excluding(
    query: &EmbeddingVector,
    index: &EmbeddedDataset,
    exclude_instance_id: Option<&str>,
) -> Result<LabelScoreTable, RetrievalError> {
    if query.dimension() != index.dimension {
        return Err(RetrievalError::QueryDimension {
            expected: index.dimension,
            got: query.dimension(),
        });
    }
    let mut best = vec![f64::NEG_INFINITY; index.space.len()];
    for (entry, &slot) in index.entries.iter().zip(&index.label_slots) {
        if exclude_instance_id == Some(entry.source_instance_id.as_str()) {
            continue;
        }
        let s = dot(query.as_slice(), entry.embedding.as_slice());
        if s > best[slot] {
            best[slot] = s;
        }
    }
    let scores = index
        .space
        .labels()
        .iter()
        .zip(best)
        .map(|(label, s)| {
            (
                label.clone(),
                if s.is_finite() {
                    s
                } else {
                    EXCLUDED_LABEL_SCORE
                },
            )
        })
        .collect();
    Ok(LabelScoreTable { scores })
}

/// Scores a batch of queries, preserving order.
pub fn score_many(
    queries: &[EmbeddingVector],
    index: &EmbeddedDataset,
    workers: usize,
) -> Result<Vec<LabelScoreTable>, RetrievalError> {
    par::map_ordered(queries, workers, |q| score_labels(q, index))
        .into_iter()
        .collect()
}

/// The `min(k, |labels|)` best labels, ties broken by canonical label.
pub fn top_k_labels(table: &LabelScoreTable, k: usize) -> ScoredRanking {
    let mut ranking = table.ranking();
    ranking.truncate(k);
    ranking
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub format_version: u32,
    pub dimension: usize,
    pub count: usize,
    pub embedder: String,
    pub normalized: bool,
    pub sha256: String,
}

impl EmbeddedDataset {
    /// Binary layout: magic, dimension (u32 LE), count (u64 LE), row-major
    /// f64 LE vectors, then per entry a length-prefixed label and instance id.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (self.dimension * 8 + 48));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            for v in e.embedding.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for e in &self.entries {
            for s in [e.label.canonical(), e.source_instance_id.as_str()] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], embedder_id: &str) -> Result<Self, RetrievalError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(RetrievalError::Format("bad magic".into()));
        }
        let dimension = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut vectors = Vec::with_capacity(count);
        for _ in 0..count {
            let mut v = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                v.push(f64::from_le_bytes(buf));
            }
            vectors.push(v);
        }
        let mut entries = Vec::with_capacity(count);
        for v in vectors {
            let label = read_string(&mut r)?;
            let label = parse_label(&label).map_err(|e| RetrievalError::Format(e.to_string()))?;
            let source_instance_id = read_string(&mut r)?;
            entries.push(IndexEntry {
                embedding: EmbeddingVector(v),
                label,
                source_instance_id,
            });
        }
        if !r.is_empty() {
            return Err(RetrievalError::Format("trailing bytes".into()));
        }
        EmbeddedDataset::from_entries(entries, embedder_id)
    }

    pub fn manifest(&self, bytes: &[u8]) -> IndexManifest {
        IndexManifest {
            format: "miscon-index".into(),
            format_version: FORMAT_VERSION,
            dimension: self.dimension,
            count: self.entries.len(),
            embedder: self.embedder_id.clone(),
            normalized: true,
            sha256: sha256_hex(bytes),
        }
    }

    /// Writes the binary index and its JSON manifest.
    pub fn save(&self, index_path: &Path, manifest_path: &Path) -> Result<(), RetrievalError> {
        let bytes = self.to_bytes();
        if let Some(parent) = index_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(index_path, &bytes)?;
        let mut f = fs::File::create(manifest_path)?;
        serde_json::to_writer_pretty(&mut f, &self.manifest(&bytes)).map_err(io::Error::from)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(index_path: &Path, manifest_path: &Path) -> Result<Self, RetrievalError> {
        let manifest: IndexManifest = serde_json::from_slice(&fs::read(manifest_path)?)
            .map_err(|e| RetrievalError::Format(format!("manifest: {e}")))?;
        let bytes = fs::read(index_path)?;
        if sha256_hex(&bytes) != manifest.sha256 {
            return Err(RetrievalError::Format(
                "checksum does not match manifest".into(),
            ));
        }
        let index = EmbeddedDataset::from_bytes(&bytes, &manifest.embedder)?;
        if index.dimension != manifest.dimension || index.len() != manifest.count {
            return Err(RetrievalError::Format(
                "manifest disagrees with index contents".into(),
            ));
        }
        Ok(index)
    }
}

fn read_u32(r: &mut &[u8]) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut &[u8]) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_string(r: &mut &[u8]) -> Result<String, RetrievalError> {
    let len = read_u32(r)? as usize;
    if len > r.len() {
        return Err(RetrievalError::Format("truncated string".into()));
    }
    let (s, rest) = r.split_at(len);
    *r = rest;
    String::from_utf8(s.to_vec()).map_err(|e| RetrievalError::Format(e.to_string()))
}
