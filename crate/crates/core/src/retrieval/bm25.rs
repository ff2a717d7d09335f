use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{rank_by_score, ScoredDoc};
use crate::error::{Error, Result};
use crate::text::terms;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if self.k1.is_nan() || self.k1 <= 0.0 || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(format!(
                "bm25 needs k1 > 0 and 0 <= b <= 1, got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DocStats {
    chunk_id: String,
    text: String,
    len: usize,
    tf: HashMap<String, usize>,
}

/// Term statistics for Okapi BM25 over a fixed set of chunks.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    docs: Vec<DocStats>,
    df: HashMap<String, usize>,
    avgdl: f64,
}

impl Bm25Index {
    pub fn build<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let docs: Vec<DocStats> = docs
            .into_iter()
            .map(|(id, text)| {
                let ts = terms(text);
                let mut tf: HashMap<String, usize> = HashMap::new();
                for t in &ts {
                    *tf.entry(t.clone()).or_default() += 1;
                }
                for t in tf.keys() {
                    *df.entry(t.clone()).or_default() += 1;
                }
                DocStats {
                    chunk_id: id.to_string(),
                    text: text.to_string(),
                    len: ts.len(),
                    tf,
                }
            })
            .collect();
        let total: usize = docs.iter().map(|d| d.len).sum();
        let avgdl = if docs.is_empty() {
            0.0
        } else {
            total as f64 / docs.len() as f64
        };
        Bm25Index { docs, df, avgdl }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`; never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn score_doc(&self, doc: &DocStats, query_terms: &BTreeSet<String>, p: Bm25Params) -> f64 {
        let rel_len = if self.avgdl > 0.0 {
            doc.len as f64 / self.avgdl
        } else {
            1.0
        };
        let norm = p.k1 * (1.0 - p.b + p.b * rel_len);
        query_terms
            .iter()
            .filter_map(|t| doc.tf.get(t).map(|&tf| (t, tf as f64)))
            .map(|(t, tf)| self.idf(t) * tf * (p.k1 + 1.0) / (tf + norm))
            .sum()
    }

    /// Top `k` chunks by Okapi BM25. Each distinct query term counts once;
    /// chunks scoring zero are not returned.
    pub fn search(&self, query: &str, k: usize, params: Bm25Params) -> Vec<ScoredDoc> {
        let query_terms: BTreeSet<String> = terms(query).into_iter().collect();
        if k == 0 || query_terms.is_empty() {
            return Vec::new();
        }
        let hits = self
            .docs
            .iter()
            .filter_map(|d| {
                let s = self.score_doc(d, &query_terms, params);
                (s > 0.0).then(|| ScoredDoc::new(&d.chunk_id, &d.text, s, 0))
            })
            .collect();
        rank_by_score(hits, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(docs: &[(&str, &str)]) -> Bm25Index {
        Bm25Index::build(docs.iter().copied())
    }

    #[test]
    fn worked_example() {
        let idx = index(&[("d1", "a b a"), ("d2", "b c")]);
        let hits = idx.search("a", 10, Bm25Params::default());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].chunk_id, "d1");
        // ln 2 * 2 * 2.5 / (2 + 1.5 * (0.25 + 0.75 * 3 / 2.5))
        assert!((hits[0].score - 0.9304).abs() < 1e-3, "{}", hits[0].score);
    }

    #[test]
    fn absent_term_returns_nothing() {
        let idx = index(&[("d1", "a b a"), ("d2", "b c")]);
        assert!(idx.search("zebra", 10, Bm25Params::default()).is_empty());
        assert!(idx.search("", 10, Bm25Params::default()).is_empty());
        assert!(idx.search("a", 0, Bm25Params::default()).is_empty());
    }

    #[test]
    fn higher_tf_ranks_first() {
        let idx = index(&[("lo", "x y z q"), ("hi", "x x x q"), ("other", "m n o p")]);
        let hits = idx.search("x", 10, Bm25Params::default());
        let ids: Vec<_> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, ["hi", "lo"]);
    }

    #[test]
    fn case_and_punctuation_insensitive() {
        let idx = index(&[("d", "Brake pressure, nominal.")]);
        assert_eq!(idx.search("BRAKE?", 1, Bm25Params::default()).len(), 1);
    }

    #[test]
    fn params_validation() {
        assert!(Bm25Params::default().validate().is_ok());
        assert!(Bm25Params { k1: 0.0, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: 1.0, b: 1.5 }.validate().is_err());
    }
}
