//! Yes/No verification reranking.
//!
//! Each candidate label is rendered into the verification prompt together
//! with the student response and the reasoner's analysis. The reranker's
//! first-token log-probabilities for "Yes" and "No" give the score
//! `ℓ_Yes − ℓ_No`. Because both log-probabilities share one normalizer,
//! the margin equals the raw-logit margin.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    complete, BackendError, CompletionBackend, CompletionRequest, Message, Sampling,
};
use crate::label::CompositeLabel;
use crate::ranking::{RankingError, ScoredRanking};
use crate::reasoning::{label_slots, triplet_slots, ChatExample, DistilledRecord, ReasoningTrace};
use crate::record::{LabelSpace, QueryTriplet};
use crate::seed::derive_seed;
use crate::template::{PromptTemplate, TemplateError};

pub const YES: &str = "Yes";
pub const NO: &str = "No";
pub const DEFAULT_NEGATIVES: usize = 3;
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("candidate {label}: {source}")]
    Backend {
        label: String,
        #[source]
        source: BackendError,
    },
    #[error("no candidates to rerank")]
    NoCandidates,
    #[error("reasoning text is empty")]
    EmptyReasoning,
    #[error("label space has {space} labels; {m} negatives need at least {}", .m + 1)]
    SpaceTooSmall { space: usize, m: usize },
    #[error("{predicted} predictions for {targets} targets")]
    LengthMismatch { predicted: usize, targets: usize },
    #[error("cross-entropy of an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

/// Slot values of one verification prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSlots {
    pub q_text: String,
    pub mc_answer: String,
    pub explanation: String,
    pub correctness: String,
    pub reasoning_type: String,
    pub misconception: String,
    pub thought: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationPrompt {
    pub rendered_text: String,
    pub messages: Vec<Message>,
    pub slots: PromptSlots,
    pub template_version: String,
}

impl VerificationPrompt {
    pub fn request(&self) -> CompletionRequest {
        CompletionRequest::new(
            self.messages.clone(),
            Sampling {
                temperature: 0.0,
                seed: 0,
                max_tokens: 1,
            },
        )
        .with_logprob_targets([YES, NO])
    }
}

pub fn build_prompt(
    triplet: &QueryTriplet,
    reasoning: &ReasoningTrace,
    candidate: &CompositeLabel,
    template: &PromptTemplate,
) -> Result<VerificationPrompt, RerankError> {
    if reasoning.text.trim().is_empty() {
        return Err(RerankError::EmptyReasoning);
    }
    let mut slots = triplet_slots(triplet).to_vec();
    slots.extend(label_slots(candidate));
    slots.push(("thought", &reasoning.text));
    Ok(VerificationPrompt {
        rendered_text: template.render(&slots)?,
        messages: template.render_messages(&slots)?,
        slots: PromptSlots {
            q_text: triplet.question_text.clone(),
            mc_answer: triplet.chosen_answer.clone(),
            explanation: triplet.explanation.clone(),
            correctness: candidate.correctness().as_str().to_string(),
            reasoning_type: candidate.reasoning_type().as_str().to_string(),
            misconception: candidate.misconception_or_na().to_string(),
            thought: reasoning.text.clone(),
        },
        template_version: template.name().to_string(),
    })
}

/// First-token log-probabilities of "Yes" and "No".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub yes_logprob: f64,
    pub no_logprob: f64,
}

pub fn score_candidate(
    prompt: &VerificationPrompt,
    reranker: &dyn CompletionBackend,
) -> Result<TokenScore, BackendError> {
    let c = complete(&prompt.request(), reranker)?;
    Ok(TokenScore {
        yes_logprob: c.first_token_logprobs[YES],
        no_logprob: c.first_token_logprobs[NO],
    })
}

pub fn logit_margin(score: TokenScore) -> f64 {
    score.yes_logprob - score.no_logprob
}

/// Scores every candidate by logit margin. Any backend failure aborts the
/// whole instance; partial rankings are never returned.
pub fn rerank_candidates(
    triplet: &QueryTriplet,
    reasoning: &ReasoningTrace,
    candidates: &ScoredRanking,
    reranker: &dyn CompletionBackend,
    template: &PromptTemplate,
) -> Result<ScoredRanking, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::NoCandidates);
    }
    let scored = candidates
        .labels()
        .map(|label| {
            let prompt = build_prompt(triplet, reasoning, label, template)?;
            let score =
                score_candidate(&prompt, reranker).map_err(|source| RerankError::Backend {
                    label: label.canonical().to_string(),
                    source,
                })?;
            Ok((label.clone(), logit_margin(score)))
        })
        .collect::<Result<Vec<_>, RerankError>>()?;
    Ok(ScoredRanking::from_scores(scored)?)
}

/// `m` distinct labels from `space`, none equal to `truth`, drawn with a
/// ChaCha8 stream seeded by `seed`.
pub fn sample_negatives(
    truth: &CompositeLabel,
    space: &LabelSpace,
    m: usize,
    seed: u64,
) -> Result<Vec<CompositeLabel>, RerankError> {
    let pool: Vec<&CompositeLabel> = space.labels().iter().filter(|l| *l != truth).collect();
    if space.len() < m + 1 || pool.len() < m {
        return Err(RerankError::SpaceTooSmall {
            space: space.len(),
            m,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, pool.len(), m)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Yes,
    No,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Yes => YES,
            Target::No => NO,
        }
    }

    fn indicator(self) -> f64 {
        match self {
            Target::Yes => 1.0,
            Target::No => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedExample {
    pub prompt: VerificationPrompt,
    pub target: Target,
    pub origin: Origin,
    pub source_instance_id: String,
}

impl AugmentedExample {
    fn new(prompt: VerificationPrompt, origin: Origin, source_instance_id: &str) -> Self {
        let target = match origin {
            Origin::Positive => Target::Yes,
            Origin::Negative => Target::No,
        };
        AugmentedExample {
            prompt,
            target,
            origin,
            source_instance_id: source_instance_id.to_string(),
        }
    }
}

/// One positive then `m` negatives per distilled record, groups in input
/// order. Negatives for a record are seeded from `(seed, instance_id)`.
pub fn build_verification_dataset(
    distilled: &[DistilledRecord],
    space: &LabelSpace,
    m: usize,
    seed: u64,
    template: &PromptTemplate,
) -> Result<Vec<AugmentedExample>, RerankError> {
    let mut out = Vec::with_capacity(distilled.len() * (m + 1));
    for d in distilled {
        let id = d.record.instance_id();
        let triplet = &d.record.triplet;
        out.push(AugmentedExample::new(
            build_prompt(triplet, &d.reasoning, &d.record.label, template)?,
            Origin::Positive,
            id,
        ));
        let negatives = sample_negatives(
            &d.record.label,
            space,
            m,
            derive_seed(seed, id, "negatives", 0),
        )?;
        for label in &negatives {
            out.push(AugmentedExample::new(
                build_prompt(triplet, &d.reasoning, label, template)?,
                Origin::Negative,
                id,
            ));
        }
    }
    Ok(out)
}

/// Verification-dataset export line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationLine {
    pub instance_id: String,
    pub prompt: String,
    pub target: Target,
    pub origin: Origin,
}

impl From<&AugmentedExample> for VerificationLine {
    fn from(e: &AugmentedExample) -> Self {
        VerificationLine {
            instance_id: e.source_instance_id.clone(),
            prompt: e.prompt.rendered_text.clone(),
            target: e.target,
            origin: e.origin,
        }
    }
}

impl From<&AugmentedExample> for ChatExample {
    fn from(e: &AugmentedExample) -> Self {
        ChatExample::from_messages(&e.prompt.messages, e.target.as_str())
    }
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn rerank_cross_entropy(predicted: &[f64], targets: &[Target]) -> Result<f64, RerankError> {
    if predicted.len() != targets.len() {
        return Err(RerankError::LengthMismatch {
            predicted: predicted.len(),
            targets: targets.len(),
        });
    }
    if predicted.is_empty() {
        return Err(RerankError::EmptyBatch);
    }
    let total: f64 = predicted
        .iter()
        .zip(targets)
        .map(|(&p, t)| {
            let p = p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
            let y = t.indicator();
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / predicted.len() as f64)
}
