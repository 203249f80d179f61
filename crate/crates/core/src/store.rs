//! Immutable per-subject vector stores with exact top-k cosine search.
//!
//! On disk a store is a directory holding three files:
//!
//! * `manifest.json`: [`StoreManifest`] plus a `digest` field.
//! * `chunks.jsonl`: one [`Chunk`] JSON object per line, in record order.
//! * `vectors.bin`: `NLPG` magic, then `format_version`, `dim` and `count`
//!   as little-endian `u32`, then `count * dim` little-endian `f32`s,
//!   row-major.
//!
//! The digest is the hex SHA-256 over the canonical manifest bytes (with the
//! `digest` and `created_at` fields left out), followed by the bytes of
//! `chunks.jsonl` and `vectors.bin`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Chunk, Edition, Level};
use crate::embedding::{cosine_raw, EmbeddingVector};

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &[u8; 4] = b"NLPG";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const VECTORS_FILE: &str = "vectors.bin";
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("length mismatch: {chunks} chunks, {vectors} vectors")]
    LengthMismatch { chunks: usize, vectors: usize },
    #[error("a store needs at least one record")]
    Empty,
    #[error("mixed dims: record {index} has dim {found}, expected {expected}")]
    MixedDims {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate chunk_id {0:?}")]
    DuplicateChunkId(String),
    #[error("chunk {chunk_id:?} belongs to subject {found:?}, store is {expected:?}")]
    SubjectMismatch {
        chunk_id: String,
        expected: String,
        found: String,
    },
    #[error("dim mismatch: query has dim {query}, store has dim {store}")]
    DimMismatch { query: usize, store: usize },
    #[error("query vector is all zeros")]
    ZeroQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("missing manifest in {0}")]
    MissingManifest(PathBuf),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("version mismatch: found format_version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("digest mismatch: manifest records {expected}, files hash to {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("record-count mismatch: manifest says {manifest}, {file} has {found}")]
    RecordCountMismatch {
        manifest: usize,
        file: &'static str,
        found: usize,
    },
    #[error("malformed {file}: {reason}")]
    Malformed { file: &'static str, reason: String },
    #[error("duplicate subject {subject:?} in {first} and {second}")]
    DuplicateSubject {
        subject: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub subject: String,
    pub level: Level,
    pub edition: Edition,
    pub dim: usize,
    pub record_count: usize,
    pub chunk_size: usize,
    pub overlap: usize,
    pub embedder_id: String,
    pub created_at: DateTime<Utc>,
    pub format_version: u32,
}

/// Manifest as written to disk.
#[derive(Serialize, Deserialize)]
struct ManifestFile {
    #[serde(flatten)]
    manifest: StoreManifest,
    digest: String,
}

/// The manifest fields covered by the digest.
#[derive(Serialize)]
struct DigestedManifest<'a> {
    subject: &'a str,
    level: Level,
    edition: Edition,
    dim: usize,
    record_count: usize,
    chunk_size: usize,
    overlap: usize,
    embedder_id: &'a str,
    format_version: u32,
}

impl<'a> From<&'a StoreManifest> for DigestedManifest<'a> {
    fn from(m: &'a StoreManifest) -> Self {
        Self {
            subject: &m.subject,
            level: m.level,
            edition: m.edition,
            dim: m.dim,
            record_count: m.record_count,
            chunk_size: m.chunk_size,
            overlap: m.overlap,
            embedder_id: &m.embedder_id,
            format_version: m.format_version,
        }
    }
}

/// Ingestion parameters recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestMeta {
    pub level: Level,
    pub edition: Edition,
    pub chunk_size: usize,
    pub overlap: usize,
    pub embedder_id: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub chunk: Chunk,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    manifest: StoreManifest,
    records: Vec<StoreRecord>,
}

/// Assemble a store from chunks and their vectors (same order).
pub fn build_store(
    subject: &str,
    chunks: Vec<Chunk>,
    vectors: Vec<EmbeddingVector>,
    meta: IngestMeta,
) -> Result<VectorStore, StoreError> {
    if chunks.len() != vectors.len() {
        return Err(StoreError::LengthMismatch {
            chunks: chunks.len(),
            vectors: vectors.len(),
        });
    }
    let dim = vectors.first().ok_or(StoreError::Empty)?.dim();
    let mut seen = HashSet::with_capacity(chunks.len());
    for (index, (chunk, vector)) in chunks.iter().zip(&vectors).enumerate() {
        if vector.dim() != dim {
            return Err(StoreError::MixedDims {
                index,
                expected: dim,
                found: vector.dim(),
            });
        }
        if chunk.subject != subject {
            return Err(StoreError::SubjectMismatch {
                chunk_id: chunk.chunk_id.clone(),
                expected: subject.to_string(),
                found: chunk.subject.clone(),
            });
        }
        if !seen.insert(chunk.chunk_id.as_str()) {
            return Err(StoreError::DuplicateChunkId(chunk.chunk_id.clone()));
        }
    }
    let manifest = StoreManifest {
        subject: subject.to_string(),
        level: meta.level,
        edition: meta.edition,
        dim,
        record_count: chunks.len(),
        chunk_size: meta.chunk_size,
        overlap: meta.overlap,
        embedder_id: meta.embedder_id,
        created_at: meta.created_at,
        format_version: FORMAT_VERSION,
    };
    let records = chunks
        .into_iter()
        .zip(vectors)
        .map(|(chunk, vector)| StoreRecord { chunk, vector })
        .collect();
    Ok(VectorStore { manifest, records })
}

// Max-heap ordering where the top is the *worst* kept candidate: lower
// score is worse; on equal scores the larger chunk_id is worse.
struct Candidate<'a> {
    score: f64,
    chunk_id: &'a str,
    index: usize,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.chunk_id.cmp(other.chunk_id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl VectorStore {
    pub fn subject(&self) -> &str {
        &self.manifest.subject
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Exact top-k by cosine similarity in one pass over the records.
    ///
    /// Returns at most `k` records scoring at least `min_sim`, best first,
    /// equal scores ordered by ascending `chunk_id`. Records with a zero
    /// vector have no defined similarity and are never returned.
    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        min_sim: f64,
    ) -> Result<Vec<ScoredChunk>, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        if query.dim() != self.dim() {
            return Err(StoreError::DimMismatch {
                query: query.dim(),
                store: self.dim(),
            });
        }
        if query.values().iter().all(|&v| v == 0.0) {
            return Err(StoreError::ZeroQuery);
        }
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for (index, record) in self.records.iter().enumerate() {
            let Some(score) = cosine_raw(query.values(), record.vector.values()) else {
                continue;
            };
            if score < min_sim {
                continue;
            }
            let candidate = Candidate {
                score,
                chunk_id: &record.chunk.chunk_id,
                index,
            };
            if heap.len() < k {
                heap.push(candidate);
            } else if let Some(worst) = heap.peek() {
                if candidate < *worst {
                    heap.pop();
                    heap.push(candidate);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| ScoredChunk {
                chunk: self.records[c.index].chunk.clone(),
                score: c.score,
            })
            .collect())
    }
}

struct Encoded {
    manifest: Vec<u8>,
    chunks: Vec<u8>,
    vectors: Vec<u8>,
    digest: String,
}

fn digest_of(manifest: &StoreManifest, chunks: &[u8], vectors: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(
        serde_json::to_vec(&DigestedManifest::from(manifest)).expect("manifest serializes"),
    );
    hasher.update(chunks);
    hasher.update(vectors);
    hex::encode(hasher.finalize())
}

fn manifest_bytes(manifest: &StoreManifest, digest: &str) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&ManifestFile {
        manifest: manifest.clone(),
        digest: digest.to_string(),
    })
    .expect("manifest serializes");
    out.push(b'\n');
    out
}

fn encode(store: &VectorStore) -> Encoded {
    let mut chunks = Vec::new();
    for record in &store.records {
        serde_json::to_writer(&mut chunks, &record.chunk).expect("chunk serializes");
        chunks.push(b'\n');
    }
    let dim = store.dim();
    let mut vectors = Vec::with_capacity(HEADER_LEN + store.len() * dim * 4);
    vectors.extend_from_slice(MAGIC);
    vectors.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    vectors.extend_from_slice(&(dim as u32).to_le_bytes());
    vectors.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for record in &store.records {
        for v in record.vector.values() {
            vectors.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = digest_of(&store.manifest, &chunks, &vectors);
    Encoded {
        manifest: manifest_bytes(&store.manifest, &digest),
        chunks,
        vectors,
        digest,
    }
}

/// Write the three store files into `dir` and return the content digest.
pub fn persist_store(store: &VectorStore, dir: &Path) -> Result<String, StoreError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let existing = std::fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
        if let Ok(value) = serde_json::from_slice::<serde_json::Value>(&existing) {
            let found = value
                .get("format_version")
                .and_then(serde_json::Value::as_u64)
                .unwrap_or(0) as u32;
            if found != FORMAT_VERSION {
                return Err(StoreError::VersionMismatch {
                    found,
                    expected: FORMAT_VERSION,
                });
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let encoded = encode(store);
    for (name, bytes) in [
        (CHUNKS_FILE, &encoded.chunks),
        (VECTORS_FILE, &encoded.vectors),
        (MANIFEST_FILE, &encoded.manifest),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(encoded.digest)
}

fn read_required(dir: &Path, name: &str) -> Result<Vec<u8>, StoreError> {
    let path = dir.join(name);
    match std::fs::read(&path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            if name == MANIFEST_FILE {
                Err(StoreError::MissingManifest(dir.to_path_buf()))
            } else {
                Err(StoreError::MissingFile(path))
            }
        }
        Err(source) => Err(StoreError::Io { path, source }),
    }
}

fn malformed(file: &'static str, reason: impl ToString) -> StoreError {
    StoreError::Malformed {
        file,
        reason: reason.to_string(),
    }
}

/// Read a store written by [`persist_store`], verifying version, digest and
/// record counts.
pub fn load_store(dir: &Path) -> Result<VectorStore, StoreError> {
    let manifest_raw = read_required(dir, MANIFEST_FILE)?;
    let file: ManifestFile =
        serde_json::from_slice(&manifest_raw).map_err(|e| malformed(MANIFEST_FILE, e))?;
    let manifest = file.manifest;
    if manifest.format_version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if manifest_bytes(&manifest, &file.digest) != manifest_raw {
        return Err(malformed(MANIFEST_FILE, "not in canonical form"));
    }
    let chunks_raw = read_required(dir, CHUNKS_FILE)?;
    let vectors_raw = read_required(dir, VECTORS_FILE)?;
    let actual = digest_of(&manifest, &chunks_raw, &vectors_raw);
    if actual != file.digest {
        return Err(StoreError::DigestMismatch {
            expected: file.digest,
            actual,
        });
    }

    let text = std::str::from_utf8(&chunks_raw).map_err(|e| malformed(CHUNKS_FILE, e))?;
    let chunks = text
        .lines()
        .map(serde_json::from_str::<Chunk>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| malformed(CHUNKS_FILE, e))?;
    if chunks.len() != manifest.record_count {
        return Err(StoreError::RecordCountMismatch {
            manifest: manifest.record_count,
            file: CHUNKS_FILE,
            found: chunks.len(),
        });
    }

    if vectors_raw.len() < HEADER_LEN || &vectors_raw[..4] != MAGIC {
        return Err(malformed(VECTORS_FILE, "bad header"));
    }
    let word = |i: usize| {
        u32::from_le_bytes(vectors_raw[i..i + 4].try_into().expect("4-byte slice")) as usize
    };
    let (version, dim, count) = (word(4) as u32, word(8), word(12));
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if count != manifest.record_count {
        return Err(StoreError::RecordCountMismatch {
            manifest: manifest.record_count,
            file: VECTORS_FILE,
            found: count,
        });
    }
    if dim != manifest.dim || vectors_raw.len() != HEADER_LEN + count * dim * 4 {
        return Err(malformed(VECTORS_FILE, "size does not match dim and count"));
    }
    let vectors = vectors_raw[HEADER_LEN..]
        .chunks_exact(dim * 4)
        .map(|row| {
            let values = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte slice")))
                .collect();
            EmbeddingVector::new(values).map_err(|e| malformed(VECTORS_FILE, e))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let store = build_store(
        &manifest.subject,
        chunks,
        vectors,
        IngestMeta {
            level: manifest.level,
            edition: manifest.edition,
            chunk_size: manifest.chunk_size,
            overlap: manifest.overlap,
            embedder_id: manifest.embedder_id.clone(),
            created_at: manifest.created_at,
        },
    )?;
    debug_assert_eq!(store.manifest, manifest);
    Ok(store)
}

/// All deployed stores, keyed by subject.
#[derive(Debug, Clone, Default)]
pub struct StoreSet {
    stores: BTreeMap<String, Arc<VectorStore>>,
}

impl StoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, store: VectorStore) -> Result<(), StoreError> {
        let subject = store.subject().to_string();
        if self.stores.contains_key(&subject) {
            return Err(StoreError::DuplicateSubject {
                subject,
                first: PathBuf::new(),
                second: PathBuf::new(),
            });
        }
        self.stores.insert(subject, Arc::new(store));
        Ok(())
    }

    /// Load every subdirectory of `root` that holds a manifest. Two
    /// directories declaring the same subject are an error.
    pub fn load_dir(root: &Path) -> Result<Self, StoreError> {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(io_err(root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).is_file())
            .collect();
        dirs.sort();
        let mut set = Self::new();
        let mut origin: BTreeMap<String, PathBuf> = BTreeMap::new();
        for dir in dirs {
            let store = load_store(&dir)?;
            let subject = store.subject().to_string();
            if let Some(first) = origin.get(&subject) {
                return Err(StoreError::DuplicateSubject {
                    subject,
                    first: first.clone(),
                    second: dir,
                });
            }
            origin.insert(subject.clone(), dir);
            set.stores.insert(subject, Arc::new(store));
        }
        Ok(set)
    }

    pub fn get(&self, subject: &str) -> Option<&Arc<VectorStore>> {
        self.stores.get(subject)
    }

    /// Stores in subject order.
    pub fn iter(&self) -> impl Iterator<Item = &Arc<VectorStore>> {
        self.stores.values()
    }

    pub fn len(&self) -> usize {
        self.stores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stores.is_empty()
    }
}
