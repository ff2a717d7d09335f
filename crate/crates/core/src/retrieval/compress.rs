use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{renumber, ScoredDoc};
use crate::backend::ModelBackend;
use crate::error::{Error, Result};
use crate::index::{cosine_similarity, Embedding};
use crate::text::terms;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub redundancy_threshold: f64,
    pub rerank_top_n: usize,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            redundancy_threshold: 0.95,
            rerank_top_n: 5,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.redundancy_threshold > 0.0 && self.redundancy_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "redundancy_threshold {} outside (0, 1]",
                self.redundancy_threshold
            )));
        }
        if self.rerank_top_n == 0 {
            return Err(Error::InvalidArgument(
                "rerank_top_n must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Scores a (query, document) pair; higher is more relevant.
pub trait RelevanceScorer {
    fn score(&self, query: &str, doc: &str) -> Result<f64>;
}

/// Number of distinct lowercase terms shared by query and document.
#[derive(Debug, Default, Clone, Copy)]
pub struct OverlapScorer;

impl OverlapScorer {
    pub fn overlap(query: &str, doc: &str) -> usize {
        let q: BTreeSet<String> = terms(query).into_iter().collect();
        let d: BTreeSet<String> = terms(doc).into_iter().collect();
        q.intersection(&d).count()
    }
}

impl RelevanceScorer for OverlapScorer {
    fn score(&self, query: &str, doc: &str) -> Result<f64> {
        Ok(Self::overlap(query, doc) as f64)
    }
}

/// Delegates to the backend's cross-encoder endpoint.
pub struct BackendScorer<'a>(pub &'a dyn ModelBackend);

impl RelevanceScorer for BackendScorer<'_> {
    fn score(&self, query: &str, doc: &str) -> Result<f64> {
        Ok(self.0.rerank_score(query, doc)?)
    }
}

/// Greedy scan in rank order: a document is dropped when its cosine
/// similarity to any already kept document reaches `threshold`.
/// `embeddings[i]` belongs to `docs[i]`. Survivors keep their order and are
/// re-ranked from 1.
pub fn redundancy_filter(
    docs: Vec<ScoredDoc>,
    embeddings: &[Embedding],
    threshold: f64,
) -> Result<Vec<ScoredDoc>> {
    if docs.len() != embeddings.len() {
        return Err(Error::InvalidArgument(format!(
            "{} documents but {} embeddings",
            docs.len(),
            embeddings.len()
        )));
    }
    let mut kept: Vec<(ScoredDoc, &Embedding)> = Vec::new();
    'docs: for (doc, emb) in docs.into_iter().zip(embeddings) {
        for (_, seen) in &kept {
            if cosine_similarity(emb, seen)? >= threshold {
                continue 'docs;
            }
        }
        kept.push((doc, emb));
    }
    let mut out: Vec<ScoredDoc> = kept.into_iter().map(|(d, _)| d).collect();
    renumber(&mut out);
    Ok(out)
}

/// Lost-in-the-middle placement: the strongest documents go to the two
/// ends of the list and the weakest to the middle.
///
/// Input is best first. The result equals reversing the list and then
/// alternately prepending (even positions) and appending (odd positions),
/// so the best document ends up first for odd lengths and last for even
/// lengths. Ranks are left untouched; they still describe relevance.
pub fn litm_reorder(docs: Vec<ScoredDoc>) -> Vec<ScoredDoc> {
    let n = docs.len();
    let mut front = Vec::with_capacity(n / 2 + 1);
    let mut back = Vec::with_capacity(n / 2 + 1);
    for (i, doc) in docs.into_iter().enumerate() {
        // Positions sharing the parity of the last position fill the front.
        if (n - 1 - i).is_multiple_of(2) {
            front.push(doc);
        } else {
            back.push(doc);
        }
    }
    back.reverse();
    front.extend(back);
    front
}

/// Scores every document against `query`, keeps the best `top_n` and
/// records each survivor's score as `relevance_score`. Equal scores are
/// ordered by chunk id so membership does not depend on input order.
pub fn rerank_top_n(
    query: &str,
    docs: Vec<ScoredDoc>,
    top_n: usize,
    scorer: &dyn RelevanceScorer,
) -> Result<Vec<ScoredDoc>> {
    let mut scored = Vec::with_capacity(docs.len());
    for mut doc in docs {
        let s = scorer.score(query, &doc.text).map_err(|e| Error::Scorer {
            doc_id: doc.chunk_id.clone(),
            source: Box::new(e),
        })?;
        doc.score = s;
        doc.relevance_score = Some(s);
        scored.push(doc);
    }
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    scored.truncate(top_n);
    renumber(&mut scored);
    Ok(scored)
}

/// Redundancy filter, then rerank, then lost-in-the-middle placement.
pub fn compress_contexts(
    query: &str,
    candidates: Vec<ScoredDoc>,
    embeddings: &[Embedding],
    config: &CompressionConfig,
    scorer: &dyn RelevanceScorer,
) -> Result<Vec<ScoredDoc>> {
    let filtered = redundancy_filter(candidates, embeddings, config.redundancy_threshold)?;
    let reranked = rerank_top_n(query, filtered, config.rerank_top_n, scorer)?;
    Ok(litm_reorder(reranked))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(ids: &[&str]) -> Vec<ScoredDoc> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| ScoredDoc::new(id, id, (ids.len() - i) as f64, i + 1))
            .collect()
    }

    fn ids(v: &[ScoredDoc]) -> Vec<&str> {
        v.iter().map(|d| d.chunk_id.as_str()).collect()
    }

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    /// Unit vector at angle acos(c) from the x axis.
    fn at_cosine(c: f64) -> Embedding {
        Embedding::new(vec![c, (1.0 - c * c).sqrt()])
    }

    #[test]
    fn duplicate_dropped() {
        let out =
            redundancy_filter(docs(&["a", "b"]), &[e(&[1.0, 2.0]), e(&[1.0, 2.0])], 0.95).unwrap();
        assert_eq!(ids(&out), ["a"]);
    }

    #[test]
    fn orthogonal_all_kept() {
        let embs = [
            e(&[1.0, 0.0, 0.0]),
            e(&[0.0, 1.0, 0.0]),
            e(&[0.0, 0.0, 1.0]),
        ];
        let out = redundancy_filter(docs(&["a", "b", "c"]), &embs, 0.95).unwrap();
        assert_eq!(ids(&out), ["a", "b", "c"]);
    }

    #[test]
    fn threshold_boundary() {
        let x = e(&[1.0, 0.0]);
        let out =
            redundancy_filter(docs(&["a", "b"]), &[x.clone(), at_cosine(0.96)], 0.95).unwrap();
        assert_eq!(ids(&out), ["a"]);
        let out = redundancy_filter(docs(&["a", "b"]), &[x, at_cosine(0.94)], 0.95).unwrap();
        assert_eq!(ids(&out), ["a", "b"]);
    }

    #[test]
    fn filter_renumbers_survivors() {
        let embs = [e(&[1.0, 0.0]), e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let out = redundancy_filter(docs(&["a", "b", "c"]), &embs, 0.95).unwrap();
        assert_eq!(ids(&out), ["a", "c"]);
        assert_eq!(out[1].rank, 2);
    }

    #[test]
    fn reorder_examples() {
        assert!(litm_reorder(vec![]).is_empty());
        assert_eq!(ids(&litm_reorder(docs(&["d1"]))), ["d1"]);
        assert_eq!(
            ids(&litm_reorder(docs(&["d1", "d2", "d3", "d4", "d5"]))),
            ["d1", "d3", "d5", "d4", "d2"]
        );
        assert_eq!(
            ids(&litm_reorder(docs(&["d1", "d2", "d3", "d4"]))),
            ["d2", "d4", "d3", "d1"]
        );
    }

    fn overlap_docs() -> Vec<ScoredDoc> {
        vec![
            ScoredDoc::new("two", "Brake line pressure test", 1.0, 1),
            ScoredDoc::new("zero", "wiper blade", 0.9, 2),
            ScoredDoc::new("one", "pressure gauge", 0.8, 3),
        ]
    }

    #[test]
    fn rerank_overlap_example() {
        let out = rerank_top_n("brake pressure", overlap_docs(), 2, &OverlapScorer).unwrap();
        assert_eq!(ids(&out), ["two", "one"]);
        assert_eq!(out[0].relevance_score, Some(2.0));
        assert_eq!(out[1].relevance_score, Some(1.0));
    }

    #[test]
    fn rerank_everything_when_top_n_large() {
        let out = rerank_top_n("brake pressure", overlap_docs(), 10, &OverlapScorer).unwrap();
        assert_eq!(ids(&out), ["two", "one", "zero"]);
        assert!(rerank_top_n("q", vec![], 3, &OverlapScorer)
            .unwrap()
            .is_empty());
    }

    struct Failing;
    impl RelevanceScorer for Failing {
        fn score(&self, _: &str, doc: &str) -> Result<f64> {
            if doc == "wiper blade" {
                Err(Error::InvalidArgument("boom".into()))
            } else {
                Ok(1.0)
            }
        }
    }

    #[test]
    fn scorer_failure_names_doc() {
        let err = rerank_top_n("q", overlap_docs(), 3, &Failing).unwrap_err();
        assert!(
            matches!(&err, Error::Scorer { doc_id, .. } if doc_id == "zero"),
            "{err}"
        );
    }

    #[test]
    fn compress_composes_stages() {
        assert!(compress_contexts(
            "q",
            vec![],
            &[],
            &CompressionConfig::default(),
            &OverlapScorer
        )
        .unwrap()
        .is_empty());

        // a and b are duplicates; c is distinct.
        let cands = vec![
            ScoredDoc::new("a", "brake pressure", 3.0, 1),
            ScoredDoc::new("b", "brake pressure", 2.0, 2),
            ScoredDoc::new("c", "brake fluid", 1.0, 3),
        ];
        let embs = [e(&[1.0, 0.0]), e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let cfg = CompressionConfig {
            redundancy_threshold: 0.95,
            rerank_top_n: 2,
        };
        let out = compress_contexts("brake pressure", cands, &embs, &cfg, &OverlapScorer).unwrap();
        // Rerank gives [a (2), c (1)]; even-length placement puts a last.
        assert_eq!(ids(&out), ["c", "a"]);
    }

    #[test]
    fn config_validation() {
        assert!(CompressionConfig::default().validate().is_ok());
        let bad = CompressionConfig {
            redundancy_threshold: 0.0,
            rerank_top_n: 1,
        };
        assert!(bad.validate().is_err());
    }
}
