use std::cmp::Ordering;
use std::collections::HashSet;

use thiserror::Error;

use crate::label::CompositeLabel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankingError {
    #[error("label {0} appears more than once")]
    DuplicateLabel(String),
    #[error("label {label} has non-finite score {score}")]
    NonFinite { label: String, score: f64 },
}

/// Labels ordered by score descending, ties broken by canonical label
/// ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredRanking {
    items: Vec<(CompositeLabel, f64)>,
}

/// Order used by every ranking in the crate.
pub fn ranking_order(a: &(CompositeLabel, f64), b: &(CompositeLabel, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl ScoredRanking {
    pub fn from_scores<I>(scores: I) -> Result<Self, RankingError>
    where
        I: IntoIterator<Item = (CompositeLabel, f64)>,
    {
        let mut items: Vec<(CompositeLabel, f64)> = scores.into_iter().collect();
        let mut seen = HashSet::with_capacity(items.len());
        for (label, score) in &items {
            if !score.is_finite() {
                return Err(RankingError::NonFinite {
                    label: label.canonical().to_string(),
                    score: *score,
                });
            }
            if !seen.insert(label.canonical()) {
                return Err(RankingError::DuplicateLabel(label.canonical().to_string()));
            }
        }
        items.sort_by(ranking_order);
        Ok(ScoredRanking { items })
    }

    pub fn items(&self) -> &[(CompositeLabel, f64)] {
        &self.items
    }

    pub fn labels(&self) -> impl Iterator<Item = &CompositeLabel> {
        self.items.iter().map(|(l, _)| l)
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.items.iter().map(|(_, s)| *s)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn score_of(&self, label: &CompositeLabel) -> Option<f64> {
        self.items.iter().find(|(l, _)| l == label).map(|(_, s)| *s)
    }

    /// 1-based rank of `label`, if present.
    pub fn rank_of(&self, label: &CompositeLabel) -> Option<usize> {
        self.items
            .iter()
            .position(|(l, _)| l == label)
            .map(|p| p + 1)
    }

    pub fn truncate(&mut self, len: usize) {
        self.items.truncate(len);
    }
}
