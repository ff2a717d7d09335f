//! Browser bindings for three engine stages: page layout, hybrid search and
//! context compression. Embeddings come from the offline hashing embedder
//! and reranking uses term overlap, so nothing leaves the page.
//!
//! The `*_impl` functions hold the logic and are tested natively; the
//! exported wrappers only convert to and from JS values.

use ragforge_core::backend::{Embedder, MockBackend};
use ragforge_core::index::{chunk_text, BackendModels, ChunkingConfig, Embedding, VectorIndex};
use ragforge_core::layout::{
    mid_line, order_reading, partition_columns, render_document, FixtureSource,
};
use ragforge_core::retrieval::{
    litm_reorder, redundancy_filter, rerank_top_n, rrf_fuse, Corpus, OverlapScorer,
    RetrievalConfig, ScoredDoc,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const SAMPLES: [(&str, &str); 3] = [
    (
        "abs_service_manual",
        include_str!("../../core/fixtures/pages/abs_service_manual.json"),
    ),
    (
        "cooling_system",
        include_str!("../../core/fixtures/pages/cooling_system.json"),
    ),
    (
        "crowd_counting_page",
        include_str!("../../core/fixtures/pages/crowd_counting_page.json"),
    ),
];

#[derive(Debug, Serialize)]
pub struct PageColumns {
    pub page_no: u32,
    pub mid: Option<f64>,
    pub left: Vec<String>,
    pub right: Vec<String>,
    pub tables: usize,
}

#[derive(Debug, Serialize)]
pub struct LayoutResult {
    pub markdown: String,
    pub pages: Vec<PageColumns>,
}

#[derive(Debug, Serialize)]
pub struct SearchResult {
    pub bm25: Vec<ScoredDoc>,
    pub vector: Vec<ScoredDoc>,
    pub fused: Vec<ScoredDoc>,
}

#[derive(Debug, Serialize)]
pub struct CompressionResult {
    pub candidates: Vec<ScoredDoc>,
    pub filtered: Vec<ScoredDoc>,
    pub reranked: Vec<ScoredDoc>,
    pub reordered: Vec<ScoredDoc>,
}

pub fn layout_impl(pages_json: &str) -> Result<LayoutResult, String> {
    let pages = FixtureSource::parse(pages_json).map_err(|e| e.to_string())?;
    for p in &pages {
        p.validate().map_err(|e| e.to_string())?;
    }
    let (markdown, _) = render_document(&pages).map_err(|e| e.to_string())?;
    let first_lines = |v| {
        order_reading(v)
            .into_iter()
            .map(|e| e.text.lines().next().unwrap_or("").trim().to_string())
            .collect()
    };
    let pages = pages
        .iter()
        .map(|p| {
            let (left, right) = partition_columns(&p.elements);
            PageColumns {
                page_no: p.page_no,
                mid: mid_line(&p.elements),
                left: first_lines(left),
                right: first_lines(right),
                tables: p.tables.len(),
            }
        })
        .collect();
    Ok(LayoutResult { markdown, pages })
}

/// An in-memory corpus built from Markdown documents.
#[wasm_bindgen]
pub struct Demo {
    corpus: Corpus,
    embedder: MockBackend,
}

impl Demo {
    pub fn build(docs: &[(&str, &str)], chunking: ChunkingConfig) -> Result<Demo, String> {
        let embedder = MockBackend::new();
        let models = BackendModels {
            generation_model: String::new(),
            embedding_model: "hashing".into(),
        };
        let mut index = VectorIndex::new(
            embedder.embed("dim").map_err(|e| e.to_string())?.dim(),
            chunking,
            models,
        );
        for (doc_id, text) in docs {
            for chunk in chunk_text(doc_id, text, chunking).map_err(|e| e.to_string())? {
                let e = embedder.embed(&chunk.text).map_err(|e| e.to_string())?;
                index.add(chunk, e).map_err(|e| e.to_string())?;
            }
        }
        Ok(Demo {
            corpus: Corpus::new(index),
            embedder,
        })
    }

    pub fn search_impl(
        &self,
        query: &str,
        config: &RetrievalConfig,
    ) -> Result<SearchResult, String> {
        config.validate().map_err(|e| e.to_string())?;
        let q = self.embedder.embed(query).map_err(|e| e.to_string())?;
        let bm25 = self
            .corpus
            .bm25_search(query, config.candidate_k, config.bm25);
        let vector = self
            .corpus
            .vector_search(&q, config.candidate_k)
            .map_err(|e| e.to_string())?;
        let fused = rrf_fuse(&[bm25.clone(), vector.clone()], &config.fusion())
            .map_err(|e| e.to_string())?;
        Ok(SearchResult {
            bm25,
            vector,
            fused,
        })
    }

    pub fn compress_impl(
        &self,
        query: &str,
        config: &RetrievalConfig,
    ) -> Result<CompressionResult, String> {
        let candidates = self.search_impl(query, config)?.fused;
        let embeddings: Vec<Embedding> = candidates
            .iter()
            .filter_map(|d| self.corpus.index().embedding_of(&d.chunk_id))
            .collect();
        let filtered =
            redundancy_filter(candidates.clone(), &embeddings, config.redundancy_threshold)
                .map_err(|e| e.to_string())?;
        let reranked = rerank_top_n(query, filtered.clone(), config.rerank_top_n, &OverlapScorer)
            .map_err(|e| e.to_string())?;
        let reordered = litm_reorder(reranked.clone());
        Ok(CompressionResult {
            candidates,
            filtered,
            reranked,
            reordered,
        })
    }
}

fn to_js<T: Serialize>(v: &T) -> Result<JsValue, JsError> {
    v.serialize(&serde_wasm_bindgen::Serializer::json_compatible())
        .map_err(|e| JsError::new(&e.to_string()))
}

/// Parses retrieval settings; unknown keys are rejected so typos surface.
pub fn parse_config(json: Option<&str>) -> Result<RetrievalConfig, String> {
    match json {
        None => Ok(RetrievalConfig::default()),
        Some(j) => serde_json::from_str(j).map_err(|e| e.to_string()),
    }
}

/// Page fixture JSON shipped with the demo.
#[wasm_bindgen]
pub fn sample_pages(name: &str) -> Option<String> {
    SAMPLES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, j)| j.to_string())
}

/// Markdown plus the per-page column split for a page fixture.
#[wasm_bindgen]
pub fn layout(pages_json: &str) -> Result<JsValue, JsError> {
    to_js(&layout_impl(pages_json).map_err(|e| JsError::new(&e))?)
}

#[wasm_bindgen]
impl Demo {
    /// Builds a corpus from the shipped samples, converted to Markdown.
    #[wasm_bindgen(constructor)]
    pub fn new(chunk_size: usize, chunk_overlap: usize) -> Result<Demo, JsError> {
        let docs = SAMPLES
            .iter()
            .map(|(name, json)| layout_impl(json).map(|l| (*name, l.markdown)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| JsError::new(&e))?;
        let borrowed: Vec<(&str, &str)> = docs.iter().map(|(n, m)| (*n, m.as_str())).collect();
        let chunking = ChunkingConfig {
            size: chunk_size,
            overlap: chunk_overlap,
        };
        Demo::build(&borrowed, chunking).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(getter)]
    pub fn chunks(&self) -> usize {
        self.corpus.index().len()
    }

    /// BM25, vector and fused lists. `config_json` holds `RetrievalConfig` keys.
    pub fn search(&self, query: &str, config_json: Option<String>) -> Result<JsValue, JsError> {
        let config = parse_config(config_json.as_deref()).map_err(|e| JsError::new(&e))?;
        to_js(
            &self
                .search_impl(query, &config)
                .map_err(|e| JsError::new(&e))?,
        )
    }

    /// The fused list after each compression stage.
    pub fn compress(&self, query: &str, config_json: Option<String>) -> Result<JsValue, JsError> {
        let config = parse_config(config_json.as_deref()).map_err(|e| JsError::new(&e))?;
        to_js(
            &self
                .compress_impl(query, &config)
                .map_err(|e| JsError::new(&e))?,
        )
    }
}
