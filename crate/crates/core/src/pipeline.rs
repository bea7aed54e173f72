//! End-to-end prediction for one student response.
//!
//! retrieve top-k → reason → rerank the top-k → fuse over the top-k, then
//! append the remaining labels of the space in retrieval order so every
//! label appears exactly once.

use thiserror::Error;

use crate::backends::{embed, CompletionBackend, EmbeddingBackend};
use crate::eval::PredictionLine;
use crate::failure::{Stage, StageFailure};
use crate::fusion::{fuse, FusionConfig};
use crate::label::CompositeLabel;
use crate::par;
use crate::ranking::ScoredRanking;
use crate::reasoning::{generate_reasoning, ReasoningPrompts, ReasoningTrace};
use crate::record::QueryTriplet;
use crate::reranking::rerank_candidates;
use crate::retrieval::{
    score_labels_excluding, top_k_labels, EmbeddedDataset, EmbeddingVector, DEFAULT_TOP_K,
};
use crate::template::PromptTemplate;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("instance {instance_id}: stage {stage}: {message}")]
pub struct PredictError {
    pub instance_id: String,
    pub stage: Stage,
    pub message: String,
    pub backend: bool,
}

impl From<PredictError> for StageFailure {
    fn from(e: PredictError) -> Self {
        StageFailure {
            instance_id: e.instance_id,
            stage: e.stage,
            message: e.message,
            backend: e.backend,
        }
    }
}

#[derive(Clone, Copy)]
pub struct PipelineBackends<'a> {
    pub embedder: &'a dyn EmbeddingBackend,
    pub reasoner: &'a dyn CompletionBackend,
    pub reranker: &'a dyn CompletionBackend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSettings {
    pub k: usize,
    pub fusion: FusionConfig,
    pub seed: u64,
    /// Skip index entries whose source instance is the query itself.
    pub exclude_self: bool,
    pub verification: PromptTemplate,
    pub prompts: ReasoningPrompts,
}

impl Default for PredictSettings {
    fn default() -> Self {
        PredictSettings {
            k: DEFAULT_TOP_K,
            fusion: FusionConfig::default(),
            seed: 0,
            exclude_self: false,
            verification: PromptTemplate::verification_v1(),
            prompts: ReasoningPrompts::default(),
        }
    }
}

/// A ranking over the whole label space made of a scored head block
/// followed by a tail block ordered by retrieval score. Each block is
/// sorted on its own scores.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRanking {
    pub head: ScoredRanking,
    pub tail: ScoredRanking,
}

impl BlockRanking {
    pub fn labels(&self) -> impl Iterator<Item = &CompositeLabel> {
        self.head.labels().chain(self.tail.labels())
    }

    pub fn len(&self) -> usize {
        self.head.len() + self.tail.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_line(&self, instance_id: &str) -> PredictionLine {
        PredictionLine {
            instance_id: instance_id.to_string(),
            ranked: self.labels().cloned().collect(),
            scores: self.head.scores().chain(self.tail.scores()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub instance_id: String,
    pub reasoning: ReasoningTrace,
    /// Full retrieval ranking over the label space.
    pub retrieval: ScoredRanking,
    /// Rerank margins over the top-k, then the rest by retrieval score.
    pub rerank: BlockRanking,
    /// Fused scores over the top-k, then the rest by retrieval score.
    pub fused: BlockRanking,
}

fn tail_after(full: &ScoredRanking, head: &ScoredRanking) -> ScoredRanking {
    ScoredRanking::from_scores(
        full.items()
            .iter()
            .filter(|(l, _)| head.score_of(l).is_none())
            .cloned(),
    )
    .expect("subset of a valid ranking")
}

pub fn predict(
    triplet: &QueryTriplet,
    index: &EmbeddedDataset,
    backends: PipelineBackends<'_>,
    settings: &PredictSettings,
) -> Result<Prediction, PredictError> {
    let fail = |stage: Stage, backend: bool| {
        move |e: &dyn std::fmt::Display| PredictError {
            instance_id: triplet.instance_id.clone(),
            stage,
            message: e.to_string(),
            backend,
        }
    };

    let raw = embed(&[triplet.embedding_text()], backends.embedder)
        .map_err(|e| fail(Stage::Embed, true)(&e))?;
    let query = EmbeddingVector::normalized(raw.into_iter().next().expect("one vector"))
        .map_err(|e| fail(Stage::Embed, false)(&e))?;
    let exclude = settings
        .exclude_self
        .then_some(triplet.instance_id.as_str());
    let table = score_labels_excluding(&query, index, exclude)
        .map_err(|e| fail(Stage::Retrieve, false)(&e))?;
    let retrieval = table.ranking();
    let top_k = top_k_labels(&table, settings.k);

    let reasoning =
        generate_reasoning(triplet, backends.reasoner, &settings.prompts, settings.seed)
            .map_err(|e| fail(Stage::Reason, e.is_backend())(&e))?;

    let reranked = rerank_candidates(
        triplet,
        &reasoning,
        &top_k,
        backends.reranker,
        &settings.verification,
    )
    .map_err(|e| {
        fail(
            Stage::Rerank,
            matches!(e, crate::reranking::RerankError::Backend { .. }),
        )(&e)
    })?;
    let fused_head =
        fuse(&reranked, &top_k, &settings.fusion).map_err(|e| fail(Stage::Fuse, false)(&e))?;

    let tail = tail_after(&retrieval, &top_k);
    Ok(Prediction {
        instance_id: triplet.instance_id.clone(),
        reasoning,
        rerank: BlockRanking {
            head: reranked,
            tail: tail.clone(),
        },
        fused: BlockRanking {
            head: fused_head,
            tail,
        },
        retrieval,
    })
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub predictions: Vec<Prediction>,
    pub failures: Vec<StageFailure>,
}

/// Runs [`predict`] over many instances with up to `workers` in flight;
/// predictions and failures keep input order.
pub fn predict_batch(
    triplets: &[QueryTriplet],
    index: &EmbeddedDataset,
    backends: PipelineBackends<'_>,
    settings: &PredictSettings,
    workers: usize,
) -> BatchOutcome {
    let results = par::map_ordered(triplets, workers, |t| predict(t, index, backends, settings));
    let mut out = BatchOutcome::default();
    for r in results {
        match r {
            Ok(p) => out.predictions.push(p),
            Err(e) => out.failures.push(e.into()),
        }
    }
    out
}
