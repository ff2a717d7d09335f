//! Hybrid retrieval and context compression.
//!
//! BM25 and vector search results are merged with weighted reciprocal rank
//! fusion, then compressed: near-duplicates are dropped, the survivors are
//! reranked by a cross-encoder style scorer, and the top results are placed
//! at both ends of the context window.

mod bm25;
mod compress;
mod fusion;
mod hybrid;

use serde::{Deserialize, Serialize};

pub use bm25::{Bm25Index, Bm25Params};
pub use compress::{
    compress_contexts, litm_reorder, redundancy_filter, rerank_top_n, BackendScorer,
    CompressionConfig, OverlapScorer, RelevanceScorer,
};
pub use fusion::{rrf_fuse, FusionConfig};
pub use hybrid::{
    Corpus, HybridRetriever, RetrievalConfig, Retriever, ScorerKind, VectorRetriever,
};

/// A retrieved chunk with its position in a result list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub chunk_id: String,
    pub text: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    /// Set by the reranker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance_score: Option<f64>,
}

impl ScoredDoc {
    pub fn new(chunk_id: &str, text: &str, score: f64, rank: usize) -> Self {
        ScoredDoc {
            chunk_id: chunk_id.to_string(),
            text: text.to_string(),
            score,
            rank,
            relevance_score: None,
        }
    }
}

/// Sorts by score descending with chunk id as the tie-break, truncates to
/// `k` and assigns ranks 1..n.
pub(crate) fn rank_by_score(mut docs: Vec<ScoredDoc>, k: usize) -> Vec<ScoredDoc> {
    docs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    docs.truncate(k);
    renumber(&mut docs);
    docs
}

pub(crate) fn renumber(docs: &mut [ScoredDoc]) {
    for (i, d) in docs.iter_mut().enumerate() {
        d.rank = i + 1;
    }
}
