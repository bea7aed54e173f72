//! Softmax-normalized weighted fusion of rerank and retrieval scores.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranking::{RankingError, ScoredRanking};

pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_BETA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("softmax of an empty vector")]
    Empty,
    #[error("non-finite score in softmax input")]
    NonFinite,
    #[error(
        "fusion weights must be non-negative with a positive sum (alpha={alpha}, beta={beta})"
    )]
    Weights { alpha: f64, beta: f64 },
    #[error("rerank and retrieval rankings cover different labels: {0:?}")]
    LabelMismatch(Vec<String>),
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }
}

impl FusionConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, FusionError> {
        let c = FusionConfig { alpha, beta };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta > 0.0
            && (self.alpha + self.beta).is_finite();
        if ok {
            Ok(())
        } else {
            Err(FusionError::Weights {
                alpha: self.alpha,
                beta: self.beta,
            })
        }
    }
}

/// Softmax with max-subtraction.
pub fn softmax_normalize(scores: &[f64]) -> Result<Vec<f64>, FusionError> {
    if scores.is_empty() {
        return Err(FusionError::Empty);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FusionError::NonFinite);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Fuses two rankings over the same label set:
/// `α·softmax(rerank) + β·softmax(retrieve)` per label.
pub fn fuse(
    rerank: &ScoredRanking,
    retrieve: &ScoredRanking,
    config: &FusionConfig,
) -> Result<ScoredRanking, FusionError> {
    config.validate()?;
    let rerank_labels: BTreeSet<_> = rerank.labels().collect();
    let retrieve_labels: BTreeSet<_> = retrieve.labels().collect();
    if rerank_labels != retrieve_labels {
        let diff = rerank_labels
            .symmetric_difference(&retrieve_labels)
            .map(|l| l.canonical().to_string())
            .collect();
        return Err(FusionError::LabelMismatch(diff));
    }
    let rerank_norm = softmax_normalize(&rerank.scores().collect::<Vec<_>>())?;
    let retrieve_norm = softmax_normalize(&retrieve.scores().collect::<Vec<_>>())?;
    let fused = rerank.labels().zip(&rerank_norm).map(|(label, r)| {
        let pos = retrieve
            .labels()
            .position(|l| l == label)
            .expect("same label set");
        (
            label.clone(),
            config.alpha * r + config.beta * retrieve_norm[pos],
        )
    });
    Ok(ScoredRanking::from_scores(fused.collect::<Vec<_>>())?)
}
