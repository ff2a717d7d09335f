use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{rank_by_score, ScoredDoc};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// One weight per input list, summing to 1.
    pub weights: Vec<f64>,
    pub rrf_k: u32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            weights: vec![0.5, 0.5],
            rrf_k: 60,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "fusion weights must be non-negative".into(),
            ));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "fusion weights sum to {sum}, not 1"
            )));
        }
        if self.rrf_k < 1 {
            return Err(Error::InvalidArgument("rrf_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Weighted reciprocal rank fusion: `score(d) = Σ_i w_i / (rrf_k + rank_i(d))`
/// over the lists that contain `d`. Output is sorted by fused score with
/// chunk id as the tie-break and re-ranked from 1.
pub fn rrf_fuse(lists: &[Vec<ScoredDoc>], config: &FusionConfig) -> Result<Vec<ScoredDoc>> {
    if lists.len() != config.weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ranked lists but {} weights",
            lists.len(),
            config.weights.len()
        )));
    }
    let k = config.rrf_k as f64;
    let mut fused: HashMap<&str, ScoredDoc> = HashMap::new();
    for (list, &weight) in lists.iter().zip(&config.weights) {
        for doc in list {
            let contribution = weight / (k + doc.rank as f64);
            fused
                .entry(doc.chunk_id.as_str())
                .and_modify(|d| d.score += contribution)
                .or_insert_with(|| ScoredDoc::new(&doc.chunk_id, &doc.text, contribution, 0));
        }
    }
    let n = fused.len();
    Ok(rank_by_score(fused.into_values().collect(), n))
}
