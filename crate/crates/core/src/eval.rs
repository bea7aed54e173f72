//! MAP@m evaluation.
//!
//! Per instance, MAP@m is `1/j` when the true label sits at rank `j ≤ m`
//! and 0 otherwise; the aggregate is the mean over instances, reduced in
//! instance-id order.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::CompositeLabel;
use crate::ranking::ScoredRanking;

pub const DEFAULT_M_VALUES: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("stage {stage}: no prediction for instance {instance_id}")]
    MissingPrediction { stage: String, instance_id: String },
    #[error("stage {stage}: prediction for unknown instance {instance_id}")]
    UnknownInstance { stage: String, instance_id: String },
    #[error("stage {stage}: duplicate prediction for instance {instance_id}")]
    DuplicatePrediction { stage: String, instance_id: String },
    #[error("m values must be positive")]
    BadCutoff,
}

/// 1/j for the truth at rank j ≤ m, else 0.
pub fn reciprocal_rank_at(ranked: &[CompositeLabel], truth: &CompositeLabel, m: usize) -> f64 {
    ranked
        .iter()
        .take(m)
        .position(|l| l == truth)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

pub fn map_at_m(ranking: &ScoredRanking, truth: &CompositeLabel, m: usize) -> f64 {
    ranking
        .labels()
        .take(m)
        .position(|l| l == truth)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Predictions export line: labels best-first with their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub instance_id: String,
    pub ranked: Vec<CompositeLabel>,
    pub scores: Vec<f64>,
}

impl PredictionLine {
    pub fn from_ranking(instance_id: impl Into<String>, ranking: &ScoredRanking) -> Self {
        PredictionLine {
            instance_id: instance_id.into(),
            ranked: ranking.labels().cloned().collect(),
            scores: ranking.scores().collect(),
        }
    }
}

/// One named set of per-instance rankings (e.g. retrieval-only).
#[derive(Debug, Clone, Copy)]
pub struct StagePredictions<'a> {
    pub stage: &'a str,
    pub lines: &'a [PredictionLine],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub stage: String,
    /// Aggregate MAP@m, aligned with the report's `m_values`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    pub m_values: Vec<usize>,
    pub rows: Vec<ReportRow>,
}

/// Per-instance MAP@m for one stage, keyed by instance id.
pub fn per_instance_scores(
    stage: StagePredictions<'_>,
    truths: &BTreeMap<String, CompositeLabel>,
    m_values: &[usize],
) -> Result<BTreeMap<String, Vec<f64>>, EvalError> {
    if m_values.contains(&0) {
        return Err(EvalError::BadCutoff);
    }
    let mut by_id: BTreeMap<&str, &PredictionLine> = BTreeMap::new();
    for line in stage.lines {
        if !truths.contains_key(&line.instance_id) {
            return Err(EvalError::UnknownInstance {
                stage: stage.stage.to_string(),
                instance_id: line.instance_id.clone(),
            });
        }
        if by_id.insert(&line.instance_id, line).is_some() {
            return Err(EvalError::DuplicatePrediction {
                stage: stage.stage.to_string(),
                instance_id: line.instance_id.clone(),
            });
        }
    }
    truths
        .iter()
        .map(|(id, truth)| {
            let line = by_id
                .get(id.as_str())
                .ok_or_else(|| EvalError::MissingPrediction {
                    stage: stage.stage.to_string(),
                    instance_id: id.clone(),
                })?;
            Ok((
                id.clone(),
                m_values
                    .iter()
                    .map(|&m| reciprocal_rank_at(&line.ranked, truth, m))
                    .collect(),
            ))
        })
        .collect()
}

pub fn evaluate(
    stages: &[StagePredictions<'_>],
    truths: &BTreeMap<String, CompositeLabel>,
    m_values: &[usize],
) -> Result<EvalReport, EvalError> {
    let mut seen = HashSet::new();
    let m_values: Vec<usize> = m_values
        .iter()
        .copied()
        .filter(|m| seen.insert(*m))
        .collect();
    let rows = stages
        .iter()
        .map(|stage| {
            let per_instance = per_instance_scores(*stage, truths, &m_values)?;
            let n = per_instance.len();
            let values = (0..m_values.len())
                .map(|k| {
                    let sum = per_instance.values().fold(0.0, |acc, v| acc + v[k]);
                    if n == 0 {
                        0.0
                    } else {
                        sum / n as f64
                    }
                })
                .collect();
            Ok(ReportRow {
                stage: stage.stage.to_string(),
                values,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalReport {
        instances: truths.len(),
        m_values,
        rows,
    })
}

impl EvalReport {
    /// Fixed-width text table, one row per stage.
    pub fn to_table(&self) -> String {
        let name_width = self
            .rows
            .iter()
            .map(|r| r.stage.len())
            .max()
            .unwrap_or(0)
            .max("Method".len());
        let headers: Vec<String> = self.m_values.iter().map(|m| format!("MAP@{m}")).collect();
        let widths: Vec<usize> = headers.iter().map(|h| h.len().max(6)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<name_width$}", "Method");
        for (h, w) in headers.iter().zip(&widths) {
            let _ = write!(out, " | {h:>w$}");
        }
        out.push('\n');
        out.push_str(&"-".repeat(name_width));
        for w in &widths {
            out.push_str("-+-");
            out.push_str(&"-".repeat(*w));
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<name_width$}", row.stage);
            for (v, w) in row.values.iter().zip(&widths) {
                let _ = write!(out, " | {v:>w$.4}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "({} instances)", self.instances);
        out
    }
}
