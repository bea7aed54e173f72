//! Chain-of-thought generation and teacher distillation.
//!
//! Distillation samples `m` candidate rationales per labeled record from a
//! teacher, asks a judge to score each one, keeps the best-scoring
//! candidate (lowest index on ties) and collects the winners into the
//! distilled dataset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, CompletionBackend, CompletionRequest, Message, Sampling};
use crate::failure::{Stage, StageFailure};
use crate::label::CompositeLabel;
use crate::par;
use crate::record::{DatasetRecord, QueryTriplet};
use crate::seed::derive_seed;
use crate::template::{PromptTemplate, TemplateError};

pub const DEFAULT_CANDIDATES: usize = 4;
pub const JUDGE_SCORE_RANGE: (f64, f64) = (0.0, 10.0);
const JUDGE_REPROMPT: &str = "Respond with only a single number between 0 and 10.";

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("instance {instance_id}: backend failure: {source}")]
    Backend {
        instance_id: String,
        #[source]
        source: BackendError,
    },
    #[error("instance {instance_id}: empty completion after retry")]
    EmptyCompletion { instance_id: String },
    #[error("instance {instance_id}: unparsable judge response(s): {raw:?}")]
    JudgeUnparsable {
        instance_id: String,
        raw: Vec<String>,
    },
    #[error("candidate count must be at least 1")]
    NoCandidates,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl ReasoningError {
    pub fn is_backend(&self) -> bool {
        matches!(self, ReasoningError::Backend { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub instance_id: String,
    pub text: String,
    pub producer: String,
    #[serde(default)]
    pub candidate_index: Option<usize>,
    #[serde(default)]
    pub judge_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub instance_id: String,
    pub candidates: Vec<ReasoningTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub candidate_index: usize,
    pub score: f64,
    #[serde(default)]
    pub rationale_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistilledRecord {
    pub record: DatasetRecord,
    pub reasoning: ReasoningTrace,
}

/// Prompts and sampling knobs for the reasoning stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningPrompts {
    pub reasoner: PromptTemplate,
    pub teacher: PromptTemplate,
    pub judge: PromptTemplate,
    pub teacher_temperature: f64,
    pub max_tokens: u32,
}

impl Default for ReasoningPrompts {
    fn default() -> Self {
        ReasoningPrompts {
            reasoner: PromptTemplate::reasoner_v1(),
            teacher: PromptTemplate::teacher_v1(),
            judge: PromptTemplate::judge_v1(),
            teacher_temperature: 0.7,
            max_tokens: 1024,
        }
    }
}

pub(crate) fn triplet_slots(t: &QueryTriplet) -> [(&'static str, &str); 3] {
    [
        ("q_text", &t.question_text),
        ("mc_answer", &t.chosen_answer),
        ("explanation", &t.explanation),
    ]
}

pub(crate) fn label_slots(l: &CompositeLabel) -> [(&'static str, &str); 3] {
    [
        ("correctness", l.correctness().as_str()),
        ("reasoning_type", l.reasoning_type().as_str()),
        ("misconception", l.misconception_or_na()),
    ]
}

/// Student-side prompt: the messages the reasoner sees for `triplet`.
pub fn reasoner_messages(
    triplet: &QueryTriplet,
    prompts: &ReasoningPrompts,
) -> Result<Vec<Message>, TemplateError> {
    prompts.reasoner.render_messages(&triplet_slots(triplet))
}

fn call(
    backend: &dyn CompletionBackend,
    request: &CompletionRequest,
    instance_id: &str,
) -> Result<String, ReasoningError> {
    backend
        .complete(request)
        .map(|c| c.text)
        .map_err(|source| ReasoningError::Backend {
            instance_id: instance_id.to_string(),
            source,
        })
}

/// Calls the backend, retrying once when the completion is empty or the
/// failure is transport-level.
fn call_nonempty(
    backend: &dyn CompletionBackend,
    request: &CompletionRequest,
    instance_id: &str,
) -> Result<String, ReasoningError> {
    let mut last = None;
    for _ in 0..2 {
        match call(backend, request, instance_id) {
            Ok(text) if !text.trim().is_empty() => return Ok(text),
            Ok(_) => {
                last = Some(ReasoningError::EmptyCompletion {
                    instance_id: instance_id.to_string(),
                })
            }
            Err(ReasoningError::Backend { source, .. }) if source.is_transport() => {
                last = Some(ReasoningError::Backend {
                    instance_id: instance_id.to_string(),
                    source,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("loop ran"))
}

/// Reasoner request for one triplet: greedy decoding, seed derived from
/// `run_seed` and the instance id.
pub fn reasoner_request(
    triplet: &QueryTriplet,
    prompts: &ReasoningPrompts,
    run_seed: u64,
) -> Result<CompletionRequest, TemplateError> {
    Ok(CompletionRequest::new(
        reasoner_messages(triplet, prompts)?,
        Sampling {
            temperature: 0.0,
            seed: derive_seed(run_seed, &triplet.instance_id, "reason", 0),
            max_tokens: prompts.max_tokens,
        },
    ))
}

pub fn generate_reasoning(
    triplet: &QueryTriplet,
    reasoner: &dyn CompletionBackend,
    prompts: &ReasoningPrompts,
    run_seed: u64,
) -> Result<ReasoningTrace, ReasoningError> {
    let request = reasoner_request(triplet, prompts, run_seed)?;
    let text = call_nonempty(reasoner, &request, &triplet.instance_id)?;
    Ok(ReasoningTrace {
        instance_id: triplet.instance_id.clone(),
        text,
        producer: reasoner.id().to_string(),
        candidate_index: None,
        judge_score: None,
    })
}

/// Teacher request for candidate `index` of `record`.
pub fn candidate_request(
    record: &DatasetRecord,
    index: usize,
    prompts: &ReasoningPrompts,
    seed: u64,
) -> Result<CompletionRequest, TemplateError> {
    let mut slots = triplet_slots(&record.triplet).to_vec();
    slots.extend(label_slots(&record.label));
    Ok(CompletionRequest::new(
        prompts.teacher.render_messages(&slots)?,
        Sampling {
            temperature: prompts.teacher_temperature,
            seed: derive_seed(seed, record.instance_id(), "candidate", index as u64),
            max_tokens: prompts.max_tokens,
        },
    ))
}

pub fn generate_candidates(
    record: &DatasetRecord,
    teacher: &dyn CompletionBackend,
    m: usize,
    seed: u64,
    prompts: &ReasoningPrompts,
) -> Result<CandidateSet, ReasoningError> {
    if m == 0 {
        return Err(ReasoningError::NoCandidates);
    }
    let candidates = (0..m)
        .map(|index| {
            let request = candidate_request(record, index, prompts, seed)?;
            let text = call_nonempty(teacher, &request, record.instance_id())?;
            Ok(ReasoningTrace {
                instance_id: record.instance_id().to_string(),
                text,
                producer: teacher.id().to_string(),
                candidate_index: Some(index),
                judge_score: None,
            })
        })
        .collect::<Result<Vec<_>, ReasoningError>>()?;
    Ok(CandidateSet {
        instance_id: record.instance_id().to_string(),
        candidates,
    })
}

/// First decimal number in `text`, accepted only inside the judge range.
pub fn parse_judge_score(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|b| b.is_ascii_digit())?;
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
        end += 1;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
    }
    let negative = start > 0 && bytes[start - 1] == b'-';
    let value: f64 = text[start..end].parse().ok()?;
    let value = if negative { -value } else { value };
    (JUDGE_SCORE_RANGE.0..=JUDGE_SCORE_RANGE.1)
        .contains(&value)
        .then_some(value)
}

pub fn judge_request(
    candidate: &ReasoningTrace,
    record: &DatasetRecord,
    prompts: &ReasoningPrompts,
) -> Result<CompletionRequest, TemplateError> {
    let mut slots = triplet_slots(&record.triplet).to_vec();
    slots.extend(label_slots(&record.label));
    slots.push(("thought", &candidate.text));
    Ok(CompletionRequest::new(
        prompts.judge.render_messages(&slots)?,
        Sampling {
            temperature: 0.0,
            seed: 0,
            max_tokens: 16,
        },
    ))
}

/// The follow-up request sent once when the judge's answer has no usable
/// score.
pub fn judge_reprompt(request: &CompletionRequest, raw: &str) -> CompletionRequest {
    let mut messages = request.messages.clone();
    messages.push(Message::assistant(raw));
    messages.push(Message::user(JUDGE_REPROMPT));
    CompletionRequest::new(messages, request.sampling)
}

fn judge_one(
    candidate: &ReasoningTrace,
    record: &DatasetRecord,
    judge: &dyn CompletionBackend,
    prompts: &ReasoningPrompts,
) -> Result<JudgeVerdict, ReasoningError> {
    let request = judge_request(candidate, record, prompts)?;
    let first = call(judge, &request, record.instance_id())?;
    let verdict = |score, raw: String| JudgeVerdict {
        candidate_index: candidate.candidate_index.unwrap_or(0),
        score,
        rationale_text: Some(raw),
    };
    if let Some(score) = parse_judge_score(&first) {
        return Ok(verdict(score, first));
    }
    let second = call(
        judge,
        &judge_reprompt(&request, &first),
        record.instance_id(),
    )?;
    match parse_judge_score(&second) {
        Some(score) => Ok(verdict(score, second)),
        None => Err(ReasoningError::JudgeUnparsable {
            instance_id: record.instance_id().to_string(),
            raw: vec![first, second],
        }),
    }
}

/// Index of the maximal score, lowest index on ties.
pub fn argmax_lowest_index(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn judge_candidates(
    set: &CandidateSet,
    record: &DatasetRecord,
    judge: &dyn CompletionBackend,
    prompts: &ReasoningPrompts,
) -> Result<(ReasoningTrace, Vec<JudgeVerdict>), ReasoningError> {
    if set.candidates.is_empty() {
        return Err(ReasoningError::NoCandidates);
    }
    let verdicts = set
        .candidates
        .iter()
        .map(|c| judge_one(c, record, judge, prompts))
        .collect::<Result<Vec<_>, _>>()?;
    let scores: Vec<f64> = verdicts.iter().map(|v| v.score).collect();
    let best = argmax_lowest_index(&scores).expect("non-empty");
    let mut winner = set.candidates[best].clone();
    winner.judge_score = Some(scores[best]);
    Ok((winner, verdicts))
}

#[derive(Debug, Clone, Default)]
pub struct DistillOutcome {
    pub records: Vec<DistilledRecord>,
    pub failures: Vec<StageFailure>,
}

pub fn build_distilled_dataset(
    records: &[DatasetRecord],
    teacher: &dyn CompletionBackend,
    judge: &dyn CompletionBackend,
    m: usize,
    seed: u64,
    prompts: &ReasoningPrompts,
    workers: usize,
) -> Result<DistillOutcome, ReasoningError> {
    if m == 0 {
        return Err(ReasoningError::NoCandidates);
    }
    let results = par::map_ordered(records, workers, |record| {
        let set = generate_candidates(record, teacher, m, seed, prompts)
            .map_err(|e| (Stage::Generate, e))?;
        let (winner, _) =
            judge_candidates(&set, record, judge, prompts).map_err(|e| (Stage::Judge, e))?;
        Ok::<_, (Stage, ReasoningError)>(DistilledRecord {
            record: record.clone(),
            reasoning: winner,
        })
    });
    let mut outcome = DistillOutcome::default();
    for (record, result) in records.iter().zip(results) {
        match result {
            Ok(d) => outcome.records.push(d),
            Err((stage, e)) => outcome.failures.push(StageFailure {
                instance_id: record.instance_id().to_string(),
                stage,
                backend: e.is_backend(),
                message: e.to_string(),
            }),
        }
    }
    Ok(outcome)
}

/// Distilled-dataset export line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledLine {
    pub instance_id: String,
    pub question: String,
    pub answer: String,
    pub explanation: String,
    pub label: CompositeLabel,
    pub reasoning: String,
    pub judge_score: f64,
}

impl From<&DistilledRecord> for DistilledLine {
    fn from(d: &DistilledRecord) -> Self {
        let t = &d.record.triplet;
        DistilledLine {
            instance_id: t.instance_id.clone(),
            question: t.question_text.clone(),
            answer: t.chosen_answer.clone(),
            explanation: t.explanation.clone(),
            label: d.record.label.clone(),
            reasoning: d.reasoning.text.clone(),
            judge_score: d
                .reasoning
                .judge_score
                .expect("distilled traces carry a judge score"),
        }
    }
}

impl DistilledLine {
    pub fn into_record(
        self,
        producer: &str,
    ) -> Result<DistilledRecord, crate::record::RecordError> {
        let triplet = QueryTriplet::new(
            self.instance_id,
            self.question,
            self.answer,
            self.explanation,
        )?;
        Ok(DistilledRecord {
            reasoning: ReasoningTrace {
                instance_id: triplet.instance_id.clone(),
                text: self.reasoning,
                producer: producer.to_string(),
                candidate_index: None,
                judge_score: Some(self.judge_score),
            },
            record: DatasetRecord {
                triplet,
                label: self.label,
            },
        })
    }
}

/// Conversational fine-tuning line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExample {
    pub system: String,
    pub user: String,
    pub assistant: String,
}

impl ChatExample {
    pub fn from_messages(messages: &[Message], assistant: impl Into<String>) -> Self {
        let pick = |role| {
            messages
                .iter()
                .filter(|m| m.role == role)
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n")
        };
        ChatExample {
            system: pick(crate::backends::Role::System),
            user: pick(crate::backends::Role::User),
            assistant: assistant.into(),
        }
    }
}

/// Reasoner fine-tuning data: student prompt in, teacher rationale out.
pub fn sft_examples(
    distilled: &[DistilledRecord],
    prompts: &ReasoningPrompts,
) -> Result<Vec<ChatExample>, TemplateError> {
    distilled
        .iter()
        .map(|d| {
            Ok(ChatExample::from_messages(
                &reasoner_messages(&d.record.triplet, prompts)?,
                d.reasoning.text.clone(),
            ))
        })
        .collect()
}
