//! Masked supervised contrastive objective with a soft similarity mask.
//!
//! For a batch of embeddings `z_1..z_N`, temperature `τ` and mask `M`
//! (zero diagonal):
//!
//! ```text
//! L = Σ_i  -1/S_i · Σ_{j≠i} M_ij · ( z_i·z_j/τ − log Σ_{a≠i} exp(z_i·z_a/τ) )
//! S_i = Σ_{j≠i} |M_ij|
//! ```
//!
//! Rows with `S_i = 0` contribute nothing. Embeddings are treated as free
//! parameters: the gradient is the exact derivative of the formula above,
//! and any projection back onto the unit sphere happens in the optimizer.
//!
//! Writing `w_ij = M_ij / S_i`, `W_i = Σ_j w_ij` and `p_ij` for the softmax
//! over `a ≠ i`, the gradient is `G = (C + Cᵀ) Z / τ` with
//! `C_ij = W_i p_ij − w_ij` (zero diagonal).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::CompositeLabel;
use crate::retrieval::dot;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContrastiveError {
    #[error("a contrastive batch needs at least 2 samples, got {0}")]
    TooSmall(usize),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("embedding {index} has norm {norm}, expected 1")]
    NotUnit { index: usize, norm: f64 },
    #[error("mask is {mask}x{mask}, batch has {batch} samples")]
    MaskShape { mask: usize, batch: usize },
    #[error("mask weights must satisfy 1 ≥ exact ≥ same_type ≥ same_reasoning ≥ 0")]
    Weights,
    #[error("non-finite value encountered{}", match .epoch { Some(e) => format!(" at epoch {e}"), None => String::new() })]
    NonFinite { epoch: Option<usize> },
    #[error("step size must be non-negative and finite, got {0}")]
    StepSize(f64),
}

/// Tiered mask weights: identical labels, same (correctness, reasoning type),
/// same reasoning type only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskWeights {
    pub exact: f64,
    pub same_type: f64,
    pub same_reasoning: f64,
}

impl Default for MaskWeights {
    fn default() -> Self {
        MaskWeights {
            exact: 1.0,
            same_type: 0.5,
            same_reasoning: 0.25,
        }
    }
}

impl MaskWeights {
    pub fn validate(&self) -> Result<(), ContrastiveError> {
        let ok = 1.0 >= self.exact
            && self.exact >= self.same_type
            && self.same_type >= self.same_reasoning
            && self.same_reasoning >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ContrastiveError::Weights)
        }
    }

    pub fn scaled(&self, c: f64) -> MaskWeights {
        MaskWeights {
            exact: self.exact * c,
            same_type: self.same_type * c,
            same_reasoning: self.same_reasoning * c,
        }
    }

    fn weight(&self, a: &CompositeLabel, b: &CompositeLabel) -> f64 {
        if a == b {
            self.exact
        } else if a.reasoning_type() == b.reasoning_type() && a.correctness() == b.correctness() {
            self.same_type
        } else if a.reasoning_type() == b.reasoning_type() {
            self.same_reasoning
        } else {
            0.0
        }
    }
}

/// N×N pairwise weight matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    entries: Vec<Vec<f64>>,
}

impl SoftMask {
    /// Accepts any square matrix; the diagonal is forced to zero.
    pub fn from_rows(mut entries: Vec<Vec<f64>>) -> Result<Self, ContrastiveError> {
        let n = entries.len();
        for (i, row) in entries.iter_mut().enumerate() {
            if row.len() != n {
                return Err(ContrastiveError::MaskShape {
                    mask: row.len(),
                    batch: n,
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ContrastiveError::NonFinite { epoch: None });
            }
            row[i] = 0.0;
        }
        Ok(SoftMask { entries })
    }

    /// `M_ij = 1` iff labels match (i ≠ j): the plain supervised-contrastive mask.
    pub fn binary(labels: &[CompositeLabel]) -> SoftMask {
        let n = labels.len();
        let entries = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i != j && labels[i] == labels[j] {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        SoftMask { entries }
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Reorders rows and columns: new index `k` holds old index `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> SoftMask {
        let entries = perm
            .iter()
            .map(|&i| perm.iter().map(|&j| self.entries[i][j]).collect())
            .collect();
        SoftMask { entries }
    }
}

pub fn build_soft_mask(
    labels: &[CompositeLabel],
    weights: MaskWeights,
) -> Result<SoftMask, ContrastiveError> {
    if labels.len() < 2 {
        return Err(ContrastiveError::TooSmall(labels.len()));
    }
    weights.validate()?;
    let n = labels.len();
    let entries = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        weights.weight(&labels[i], &labels[j])
                    }
                })
                .collect()
        })
        .collect();
    Ok(SoftMask { entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    embeddings: Vec<Vec<f64>>,
    temperature: f64,
}

impl ContrastiveBatch {
    /// A batch of unit-norm embeddings.
    pub fn new(embeddings: Vec<Vec<f64>>, temperature: f64) -> Result<Self, ContrastiveError> {
        let batch = Self::free(embeddings, temperature)?;
        for (index, z) in batch.embeddings.iter().enumerate() {
            let norm = dot(z, z).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(ContrastiveError::NotUnit { index, norm });
            }
        }
        Ok(batch)
    }

    /// A batch of arbitrary (not necessarily unit) embeddings, for
    /// derivative checks and optimizer internals.
    pub fn free(embeddings: Vec<Vec<f64>>, temperature: f64) -> Result<Self, ContrastiveError> {
        if embeddings.len() < 2 {
            return Err(ContrastiveError::TooSmall(embeddings.len()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ContrastiveError::Temperature(temperature));
        }
        let expected = embeddings[0].len();
        for (index, z) in embeddings.iter().enumerate() {
            if z.len() != expected {
                return Err(ContrastiveError::Dimension {
                    index,
                    expected,
                    got: z.len(),
                });
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(ContrastiveError::NonFinite { epoch: None });
            }
        }
        Ok(ContrastiveBatch {
            embeddings,
            temperature,
        })
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Per-anchor quantities shared by the loss and the gradient.
struct AnchorTerms {
    /// `M_ij / S_i`, zero on the diagonal.
    weights: Vec<f64>,
    /// Softmax over `a ≠ i` of `z_i·z_a/τ`, zero on the diagonal.
    probs: Vec<f64>,
    loss: f64,
}

fn anchor_terms(batch: &ContrastiveBatch, mask: &SoftMask, i: usize) -> Option<AnchorTerms> {
    let n = batch.len();
    let row = &mask.entries[i];
    let support: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, m)| m.abs())
        .sum();
    if support == 0.0 {
        return None;
    }
    let zi = &batch.embeddings[i];
    let logits: Vec<f64> = (0..n)
        .map(|a| {
            if a == i {
                f64::NEG_INFINITY
            } else {
                dot(zi, &batch.embeddings[a]) / batch.temperature
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let lse = max + total.ln();
    let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let weights: Vec<f64> = (0..n)
        .map(|j| if j == i { 0.0 } else { row[j] / support })
        .collect();
    let loss = -(0..n)
        .filter(|&j| j != i)
        .map(|j| weights[j] * (logits[j] - lse))
        .sum::<f64>();
    Some(AnchorTerms {
        weights,
        probs,
        loss,
    })
}

fn check_shape(batch: &ContrastiveBatch, mask: &SoftMask) -> Result<(), ContrastiveError> {
    if mask.size() != batch.len() {
        return Err(ContrastiveError::MaskShape {
            mask: mask.size(),
            batch: batch.len(),
        });
    }
    Ok(())
}

pub fn mask_supcon_loss(
    batch: &ContrastiveBatch,
    mask: &SoftMask,
) -> Result<f64, ContrastiveError> {
    check_shape(batch, mask)?;
    let loss: f64 = (0..batch.len())
        .filter_map(|i| anchor_terms(batch, mask, i))
        .map(|t| t.loss)
        .sum();
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(ContrastiveError::NonFinite { epoch: None })
    }
}

/// `∂L/∂z_k` for every sample, as an N×d matrix.
pub fn mask_supcon_gradient(
    batch: &ContrastiveBatch,
    mask: &SoftMask,
) -> Result<Vec<Vec<f64>>, ContrastiveError> {
    check_shape(batch, mask)?;
    let n = batch.len();
    let d = batch.embeddings[0].len();
    let mut coupling = vec![vec![0.0; n]; n];
    for (i, row) in coupling.iter_mut().enumerate() {
        if let Some(t) = anchor_terms(batch, mask, i) {
            let total_weight: f64 = t.weights.iter().sum();
            for j in (0..n).filter(|&j| j != i) {
                row[j] = total_weight * t.probs[j] - t.weights[j];
            }
        }
    }
    let mut grad = vec![vec![0.0; d]; n];
    for k in 0..n {
        #[allow(clippy::needless_range_loop)]
        for j in 0..n {
            let c = coupling[k][j] + coupling[j][k];
            if c != 0.0 {
                for (g, z) in grad[k].iter_mut().zip(&batch.embeddings[j]) {
                    *g += c * z;
                }
            }
        }
        for g in grad[k].iter_mut() {
            *g /= batch.temperature;
        }
    }
    if grad.iter().flatten().all(|g| g.is_finite()) {
        Ok(grad)
    } else {
        Err(ContrastiveError::NonFinite { epoch: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub temperature: f64,
    pub weights: MaskWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            step_size: 0.05,
            temperature: DEFAULT_TEMPERATURE,
            weights: MaskWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub embeddings: Vec<Vec<f64>>,
    /// Loss before each epoch's update.
    pub curve: Vec<LossPoint>,
}

fn project_to_sphere(z: &mut [f64]) {
    let norm = dot(z, z).sqrt();
    if norm > 0.0 {
        z.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Projected gradient descent on free embeddings: after every step each
/// embedding is renormalized to the unit sphere.
pub fn toy_train(
    labels: &[CompositeLabel],
    init: Vec<Vec<f64>>,
    config: &TrainConfig,
) -> Result<TrainOutcome, ContrastiveError> {
    if !(config.step_size >= 0.0 && config.step_size.is_finite()) {
        return Err(ContrastiveError::StepSize(config.step_size));
    }
    let mask = build_soft_mask(labels, config.weights)?;
    let mut z = init;
    z.iter_mut().for_each(|v| project_to_sphere(v));
    let mut batch = ContrastiveBatch::free(z, config.temperature)?;
    check_shape(&batch, &mask)?;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = mask_supcon_loss(&batch, &mask)
            .map_err(|_| ContrastiveError::NonFinite { epoch: Some(epoch) })?;
        curve.push(LossPoint { epoch, loss });
        if config.step_size == 0.0 {
            continue;
        }
        let grad = mask_supcon_gradient(&batch, &mask)
            .map_err(|_| ContrastiveError::NonFinite { epoch: Some(epoch) })?;
        for (zk, gk) in batch.embeddings.iter_mut().zip(&grad) {
            for (v, g) in zk.iter_mut().zip(gk) {
                *v -= config.step_size * g;
            }
            project_to_sphere(zk);
            if zk.iter().any(|v| !v.is_finite()) {
                return Err(ContrastiveError::NonFinite { epoch: Some(epoch) });
            }
        }
    }
    Ok(TrainOutcome {
        embeddings: batch.embeddings,
        curve,
    })
}
