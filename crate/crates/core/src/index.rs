//! Fixed-length chunking and a flat cosine-similarity index.
//!
//! On disk an index is a directory holding `manifest.json`, `chunks.jsonl`
//! (one chunk per line) and `embeddings.f32` (row-major little-endian f32,
//! `embedding_dim` values per chunk). Writes go to a sibling temp directory
//! that is renamed into place, so readers never see a partial index.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::ScoredDoc;
use crate::text::token_spans;

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.f32";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub text: String,
    /// Half-open token range within the source document.
    pub token_span: (usize, usize),
}

/// A dense vector as produced by the embedder. The index stores rows as
/// f32, so vectors read back from an index are f32-rounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Embedding::new(values)
    }
}

fn norm<T: Copy + Into<f64>>(v: &[T]) -> f64 {
    v.iter().map(|&x| x.into() * x.into()).sum::<f64>().sqrt()
}

fn cosine_raw<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("zero-length embedding".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_raw(&a.values, &b.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub size: usize,
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            size: 512,
            overlap: 64,
        }
    }
}

/// Splits `text` into windows of `size` tokens starting every
/// `size - overlap` tokens. The last window may be short. Chunk text is the
/// source slice from the first token to the last, so line breaks survive.
pub fn chunk_text(doc_id: &str, text: &str, config: ChunkingConfig) -> Result<Vec<Chunk>> {
    let ChunkingConfig { size, overlap } = config;
    if size <= overlap {
        return Err(Error::InvalidArgument(format!(
            "chunk size {size} must exceed overlap {overlap}"
        )));
    }
    let spans = token_spans(text);
    let stride = size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < spans.len() {
        let end = (start + size).min(spans.len());
        let bytes = spans[start].start..spans[end - 1].end;
        chunks.push(Chunk {
            id: format!("{doc_id}#{:05}", chunks.len()),
            doc_id: doc_id.to_string(),
            text: text[bytes].to_string(),
            token_span: (start, end),
        });
        if end == spans.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BackendModels {
    pub generation_model: String,
    pub embedding_model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexManifest {
    pub format_version: String,
    pub embedding_dim: usize,
    pub chunk_count: usize,
    pub chunking: ChunkingConfig,
    pub backend: BackendModels,
}

/// Chunks with one embedding each, searched by brute-force cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    manifest: IndexManifest,
    chunks: Vec<Chunk>,
    /// Row-major, `embedding_dim` values per chunk.
    matrix: Vec<f32>,
}

impl VectorIndex {
    pub fn new(embedding_dim: usize, chunking: ChunkingConfig, backend: BackendModels) -> Self {
        VectorIndex {
            manifest: IndexManifest {
                format_version: FORMAT_VERSION.to_string(),
                embedding_dim,
                chunk_count: 0,
                chunking,
                backend,
            },
            chunks: Vec::new(),
            matrix: Vec::new(),
        }
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.manifest.embedding_dim
    }

    pub fn embedding_at(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.matrix[i * d..(i + 1) * d]
    }

    pub fn position(&self, chunk_id: &str) -> Option<usize> {
        self.chunks.iter().position(|c| c.id == chunk_id)
    }

    pub fn embedding_of(&self, chunk_id: &str) -> Option<Embedding> {
        self.position(chunk_id)
            .map(|i| Embedding::new(self.embedding_at(i).iter().map(|&v| v as f64).collect()))
    }

    pub fn add(&mut self, chunk: Chunk, embedding: Embedding) -> Result<()> {
        if embedding.dim() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "embedding for {} has dimension {}, index expects {}",
                chunk.id,
                embedding.dim(),
                self.dim()
            )));
        }
        if self.position(&chunk.id).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate chunk id {}",
                chunk.id
            )));
        }
        self.matrix
            .extend(embedding.values().iter().map(|&v| v as f32));
        self.chunks.push(chunk);
        self.manifest.chunk_count = self.chunks.len();
        Ok(())
    }

    /// Top `k` chunks by cosine similarity, best first; equal scores are
    /// ordered by chunk id.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<ScoredDoc>> {
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let mut scored = Vec::with_capacity(self.len());
        for (i, chunk) in self.chunks.iter().enumerate() {
            scored.push((cosine_raw(query.values(), self.embedding_at(i))?, chunk));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (score, chunk))| ScoredDoc::new(&chunk.id, &chunk.text, score, i + 1))
            .collect())
    }

    /// Writes the index into `dir`, replacing any previous contents atomically.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        let parent = dir
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "index".into());
        let tmp = parent.join(format!(".{name}.tmp-{}", unique_suffix()));
        fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;

        let result = self
            .write_files(&tmp)
            .and_then(|()| swap_into_place(&tmp, dir));
        if result.is_err() {
            let _ = fs::remove_dir_all(&tmp);
        }
        result
    }

    fn write_files(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

        let path = dir.join(CHUNKS_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for chunk in &self.chunks {
            serde_json::to_writer(&mut w, chunk).expect("chunk serializes");
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(EMBEDDINGS_FILE);
        let bytes: Vec<u8> = self.matrix.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: IndexManifest =
            serde_json::from_slice(&raw).map_err(|e| Error::index(MANIFEST_FILE, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::index(
                MANIFEST_FILE,
                format!("unsupported format_version {:?}", manifest.format_version),
            ));
        }
        if manifest.embedding_dim == 0 {
            return Err(Error::index(
                MANIFEST_FILE,
                "embedding_dim must be positive",
            ));
        }

        let path = dir.join(CHUNKS_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut chunks = Vec::with_capacity(manifest.chunk_count);
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Chunk = serde_json::from_str(&line)
                .map_err(|e| Error::index(CHUNKS_FILE, format!("line {}: {e}", lineno + 1)))?;
            chunks.push(chunk);
        }
        if chunks.len() != manifest.chunk_count {
            return Err(Error::index(
                CHUNKS_FILE,
                format!(
                    "{} chunks, manifest says {}",
                    chunks.len(),
                    manifest.chunk_count
                ),
            ));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = chunks.iter().find(|c| !seen.insert(c.id.as_str())) {
            return Err(Error::index(
                CHUNKS_FILE,
                format!("duplicate chunk id {}", dup.id),
            ));
        }

        let path = dir.join(EMBEDDINGS_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = manifest.chunk_count * manifest.embedding_dim * 4;
        if bytes.len() != expected {
            return Err(Error::index(
                EMBEDDINGS_FILE,
                format!("{} bytes, expected {expected}", bytes.len()),
            ));
        }
        let matrix = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(VectorIndex {
            manifest,
            chunks,
            matrix,
        })
    }
}

/// Process-unique name component for temp and backup directories.
pub(crate) fn unique_suffix() -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    use std::time::{SystemTime, UNIX_EPOCH};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    format!(
        "{}-{}-{nanos}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    )
}

fn swap_into_place(tmp: &Path, dir: &Path) -> Result<()> {
    if !dir.exists() {
        return fs::rename(tmp, dir).map_err(|e| Error::io(dir, e));
    }
    let old: PathBuf = {
        let mut name = dir.as_os_str().to_owned();
        name.push(format!(".old-{}", unique_suffix()));
        name.into()
    };
    fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
    if let Err(e) = fs::rename(tmp, dir) {
        let _ = fs::rename(&old, dir);
        return Err(Error::io(dir, e));
    }
    let _ = fs::remove_dir_all(&old);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn cfg(size: usize, overlap: usize) -> ChunkingConfig {
        ChunkingConfig { size, overlap }
    }

    #[test]
    fn short_text_is_one_chunk() {
        let chunks = chunk_text("d", &words(100), cfg(512, 0)).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_span, (0, 100));
        assert_eq!(chunks[0].id, "d#00000");
    }

    #[test]
    fn strided_windows() {
        let chunks = chunk_text("d", &words(1000), cfg(512, 64)).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| c.token_span).collect();
        assert_eq!(spans, [(0, 512), (448, 960), (896, 1000)]);
        assert!(chunks[2].text.starts_with("w896 "));
        assert!(chunks[2].text.ends_with("w999"));
    }

    #[test]
    fn empty_text_and_bad_config() {
        assert!(chunk_text("d", "", cfg(512, 64)).unwrap().is_empty());
        assert!(chunk_text("d", "x", cfg(64, 64)).is_err());
    }

    #[test]
    fn exact_multiple_has_no_redundant_tail() {
        let chunks = chunk_text("d", &words(512), cfg(512, 64)).unwrap();
        assert_eq!(chunks.len(), 1);
    }

    #[test]
    fn chunk_text_keeps_line_breaks() {
        let chunks = chunk_text("d", "| a |\n| b |", cfg(8, 0)).unwrap();
        assert_eq!(chunks[0].text, "| a |\n| b |");
    }

    #[test]
    fn cosine_examples() {
        let v = Embedding::new(vec![0.3, -0.2, 0.9]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let x = Embedding::new(vec![1.0, 0.0]);
        let y = Embedding::new(vec![0.0, 1.0]);
        assert_eq!(cosine_similarity(&x, &y).unwrap(), 0.0);
        let d = Embedding::new(vec![1.0, 1.0]);
        assert!(
            (cosine_similarity(&x, &d).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12
        );
    }

    #[test]
    fn cosine_errors() {
        let x = Embedding::new(vec![1.0, 0.0]);
        assert!(cosine_similarity(&x, &Embedding::new(vec![1.0])).is_err());
        assert!(cosine_similarity(&x, &Embedding::new(vec![0.0, 0.0])).is_err());
    }

    fn small_index() -> VectorIndex {
        let mut idx = VectorIndex::new(2, ChunkingConfig::default(), BackendModels::default());
        for (i, v) in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]].into_iter().enumerate() {
            let chunk = Chunk {
                id: format!("d#{i}"),
                doc_id: "d".into(),
                text: format!("chunk {i}"),
                token_span: (i, i + 1),
            };
            idx.add(chunk, Embedding::new(v.to_vec())).unwrap();
        }
        idx
    }

    #[test]
    fn search_basics() {
        let idx = small_index();
        assert!(idx
            .search(&Embedding::new(vec![1.0, 0.0]), 0)
            .unwrap()
            .is_empty());
        let hits = idx.search(&Embedding::new(vec![1.0, 0.0]), 1).unwrap();
        assert_eq!(hits[0].chunk_id, "d#0");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        let all = idx.search(&Embedding::new(vec![1.0, 0.0]), 10).unwrap();
        let ids: Vec<_> = all.iter().map(|d| d.chunk_id.as_str()).collect();
        assert_eq!(ids, ["d#0", "d#2", "d#1"]);
        assert_eq!(all.iter().map(|d| d.rank).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn search_ties_by_id() {
        let idx = small_index();
        // Equidistant from d#0 and d#1.
        let hits = idx.search(&Embedding::new(vec![1.0, 1.0]), 3).unwrap();
        assert_eq!(hits[0].chunk_id, "d#2");
        assert_eq!(hits[1].chunk_id, "d#0");
        assert_eq!(hits[2].chunk_id, "d#1");
    }

    #[test]
    fn add_rejects_wrong_dim_and_duplicates() {
        let mut idx = small_index();
        let chunk = idx.chunks()[0].clone();
        assert!(idx.add(chunk.clone(), Embedding::new(vec![1.0])).is_err());
        assert!(idx.add(chunk, Embedding::new(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn persist_round_trip_and_replace() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("idx");
        let empty = VectorIndex::new(4, ChunkingConfig::default(), BackendModels::default());
        empty.persist(&dir).unwrap();
        assert_eq!(VectorIndex::load(&dir).unwrap(), empty);

        let idx = small_index();
        idx.persist(&dir).unwrap();
        let loaded = VectorIndex::load(&dir).unwrap();
        assert_eq!(loaded, idx);
        let q = Embedding::new(vec![0.2, 0.9]);
        assert_eq!(loaded.search(&q, 3).unwrap(), idx.search(&q, 3).unwrap());
        let leftovers = fs::read_dir(tmp.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn load_rejects_unknown_version_and_corrupt_matrix() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("idx");
        small_index().persist(&dir).unwrap();

        let emb = dir.join(EMBEDDINGS_FILE);
        let mut bytes = fs::read(&emb).unwrap();
        bytes.pop();
        fs::write(&emb, &bytes).unwrap();
        let err = VectorIndex::load(&dir).unwrap_err().to_string();
        assert!(err.contains(EMBEDDINGS_FILE), "{err}");

        small_index().persist(&dir).unwrap();
        let manifest = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest)
            .unwrap()
            .replace("\"format_version\": \"1\"", "\"format_version\": \"999\"");
        fs::write(&manifest, text).unwrap();
        let err = VectorIndex::load(&dir).unwrap_err().to_string();
        assert!(err.contains(MANIFEST_FILE) && err.contains("999"), "{err}");
    }

    #[test]
    fn load_rejects_chunk_count_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("idx");
        small_index().persist(&dir).unwrap();
        let chunks = dir.join(CHUNKS_FILE);
        let text = fs::read_to_string(&chunks).unwrap();
        let first_two: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        fs::write(&chunks, first_two).unwrap();
        let err = VectorIndex::load(&dir).unwrap_err().to_string();
        assert!(err.contains(CHUNKS_FILE), "{err}");
    }
}
