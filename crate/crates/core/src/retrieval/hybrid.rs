use serde::{Deserialize, Serialize};

use super::{
    compress_contexts, rrf_fuse, Bm25Index, Bm25Params, CompressionConfig, FusionConfig,
    RelevanceScorer, ScoredDoc,
};
use crate::backend::Embedder;
use crate::error::{Error, Result};
use crate::index::{Embedding, VectorIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Fusion weights, BM25 first then vector.
    pub weights: Vec<f64>,
    pub rrf_k: u32,
    pub redundancy_threshold: f64,
    pub rerank_top_n: usize,
    /// Candidates taken from each retriever before fusion.
    pub candidate_k: usize,
    pub bm25: Bm25Params,
    pub scorer: ScorerKind,
}

/// Which relevance scorer the compression stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// The backend's cross-encoder when it has one, otherwise term overlap.
    #[default]
    Auto,
    Backend,
    Overlap,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let fusion = FusionConfig::default();
        let compression = CompressionConfig::default();
        RetrievalConfig {
            weights: fusion.weights,
            rrf_k: fusion.rrf_k,
            redundancy_threshold: compression.redundancy_threshold,
            rerank_top_n: compression.rerank_top_n,
            candidate_k: 20,
            bm25: Bm25Params::default(),
            scorer: ScorerKind::Auto,
        }
    }
}

impl RetrievalConfig {
    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            weights: self.weights.clone(),
            rrf_k: self.rrf_k,
        }
    }

    pub fn compression(&self) -> CompressionConfig {
        CompressionConfig {
            redundancy_threshold: self.redundancy_threshold,
            rerank_top_n: self.rerank_top_n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != 2 {
            return Err(Error::InvalidArgument(
                "retrieval.weights needs two entries: bm25, vector".into(),
            ));
        }
        self.fusion().validate()?;
        self.compression().validate()?;
        self.bm25.validate()?;
        if self.candidate_k == 0 {
            return Err(Error::InvalidArgument(
                "candidate_k must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A loaded vector index together with BM25 statistics rebuilt from its chunks.
#[derive(Debug, Clone)]
pub struct Corpus {
    index: VectorIndex,
    bm25: Bm25Index,
}

impl Corpus {
    pub fn new(index: VectorIndex) -> Self {
        let bm25 = Bm25Index::build(
            index
                .chunks()
                .iter()
                .map(|c| (c.id.as_str(), c.text.as_str())),
        );
        Corpus { index, bm25 }
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn bm25(&self) -> &Bm25Index {
        &self.bm25
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn bm25_search(&self, query: &str, k: usize, params: Bm25Params) -> Vec<ScoredDoc> {
        self.bm25.search(query, k, params)
    }

    pub fn vector_search(&self, query: &Embedding, k: usize) -> Result<Vec<ScoredDoc>> {
        self.index.search(query, k)
    }

    /// BM25 and vector candidates fused with weighted RRF.
    pub fn hybrid_search(
        &self,
        query: &str,
        query_embedding: &Embedding,
        config: &RetrievalConfig,
    ) -> Result<Vec<ScoredDoc>> {
        let lexical = self.bm25_search(query, config.candidate_k, config.bm25);
        let semantic = self.vector_search(query_embedding, config.candidate_k)?;
        rrf_fuse(&[lexical, semantic], &config.fusion())
    }

    /// Hybrid search followed by context compression.
    pub fn retrieve_contexts(
        &self,
        query: &str,
        embedder: &dyn Embedder,
        scorer: &dyn RelevanceScorer,
        config: &RetrievalConfig,
    ) -> Result<Vec<ScoredDoc>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let query_embedding = embedder.embed(query)?;
        let candidates = self.hybrid_search(query, &query_embedding, config)?;
        let embeddings = candidates
            .iter()
            .map(|d| {
                self.index
                    .embedding_of(&d.chunk_id)
                    .ok_or_else(|| Error::NotFound(format!("chunk {}", d.chunk_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        compress_contexts(
            query,
            candidates,
            &embeddings,
            &config.compression(),
            scorer,
        )
    }
}

/// Produces the contexts for one question.
pub trait Retriever {
    fn retrieve(&self, query: &str) -> Result<Vec<ScoredDoc>>;
}

/// Hybrid search plus compression over a [`Corpus`].
pub struct HybridRetriever<'a> {
    pub corpus: &'a Corpus,
    pub embedder: &'a dyn Embedder,
    pub scorer: &'a dyn RelevanceScorer,
    pub config: &'a RetrievalConfig,
}

impl Retriever for HybridRetriever<'_> {
    fn retrieve(&self, query: &str) -> Result<Vec<ScoredDoc>> {
        self.corpus
            .retrieve_contexts(query, self.embedder, self.scorer, self.config)
    }
}

/// Plain top-k cosine search.
pub struct VectorRetriever<'a> {
    pub corpus: &'a Corpus,
    pub embedder: &'a dyn Embedder,
    pub k: usize,
}

impl Retriever for VectorRetriever<'_> {
    fn retrieve(&self, query: &str) -> Result<Vec<ScoredDoc>> {
        if self.corpus.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.embedder.embed(query)?;
        self.corpus.vector_search(&q, self.k)
    }
}
