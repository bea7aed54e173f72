//! Embedding and completion backend contracts.
//!
//! Two implementations ship for each role: a fixture-replay backend keyed by
//! request hashes (zero network, byte-identical answers) and an HTTP client
//! for OpenAI-compatible inference servers. Every handle enforces its own
//! in-flight cap through an [`InFlightGate`].

mod fixture;
mod gate;
mod http;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fixture::{
    CompletionFixtureEntry, EmbeddingFixtureEntry, FixtureCompletion, FixtureEmbedder,
};
pub use gate::{GateGuard, InFlightGate};
pub use http::{HttpCompletion, HttpEmbedder};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("no fixture entry for key {key}")]
    MissingFixture { key: String },
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("backend returned {got} embeddings for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("backend does not return token log-probabilities")]
    LogprobsUnsupported,
    #[error("target token {target:?} not among returned alternatives {available:?}")]
    TargetUnscored {
        target: String,
        available: Vec<String>,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether the failure happened below the model (network, timeouts,
    /// server errors). Only these are retried.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            BackendError::Transport { .. } | BackendError::Timeout { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.0,
            seed: 0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub sampling: Sampling,
    /// Candidate first tokens whose log-probabilities must be returned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob_targets: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn new(messages: Vec<Message>, sampling: Sampling) -> Self {
        CompletionRequest {
            messages,
            sampling,
            logprob_targets: None,
        }
    }

    pub fn with_logprob_targets<I, S>(mut self, targets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.logprob_targets = Some(targets.into_iter().map(Into::into).collect());
        self
    }

    /// Stable fixture key: SHA-256 over the canonical JSON of the messages
    /// and the sampling seed.
    pub fn fixture_key(&self) -> String {
        let canonical = serde_json::json!({
            "messages": self
                .messages
                .iter()
                .map(|m| [serde_json::to_value(m.role).unwrap(), m.content.clone().into()])
                .collect::<Vec<_>>(),
            "seed": self.sampling.seed,
        });
        sha256_hex(canonical.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Log-probability per requested target, after variant-mass summation.
    #[serde(default)]
    pub first_token_logprobs: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fixture key of an embedding input text.
pub fn text_key(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;
}

/// Embeds `texts`, checking the count and that every vector shares the
/// first vector's dimension.
pub fn embed(
    texts: &[String],
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<Vec<f64>>, BackendError> {
    if texts.is_empty() {
        return Err(BackendError::EmptyInput);
    }
    let vectors = backend.embed_batch(texts)?;
    if vectors.len() != texts.len() {
        return Err(BackendError::CountMismatch {
            expected: texts.len(),
            got: vectors.len(),
        });
    }
    let expected = vectors[0].len();
    if let Some((index, v)) = vectors
        .iter()
        .enumerate()
        .find(|(_, v)| v.len() != expected)
    {
        return Err(BackendError::DimensionMismatch {
            index,
            expected,
            got: v.len(),
        });
    }
    Ok(vectors)
}

pub fn complete(
    request: &CompletionRequest,
    backend: &dyn CompletionBackend,
) -> Result<Completion, BackendError> {
    let completion = backend.complete(request)?;
    if let Some(targets) = &request.logprob_targets {
        for t in targets {
            if !completion.first_token_logprobs.contains_key(t) {
                return Err(BackendError::TargetUnscored {
                    target: t.clone(),
                    available: completion.first_token_logprobs.keys().cloned().collect(),
                });
            }
        }
    }
    Ok(completion)
}

/// Surface spellings that count toward a target token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVariants {
    #[serde(flatten)]
    pub variants: BTreeMap<String, Vec<String>>,
}

impl TokenVariants {
    pub fn variants_of<'a>(&'a self, target: &'a str) -> Vec<String> {
        match self.variants.get(target) {
            Some(v) => v.clone(),
            None => {
                let lower = target.to_lowercase();
                let mut v = vec![target.to_string(), format!(" {target}")];
                if lower != target {
                    v.push(lower.clone());
                    v.push(format!(" {lower}"));
                }
                v
            }
        }
    }
}

/// Collapses raw first-token alternatives onto the requested targets by
/// summing probability mass over each target's variants. Fails when a target
/// has no variant among the alternatives.
pub fn collapse_targets(
    alternatives: &[(String, f64)],
    targets: &[String],
    variants: &TokenVariants,
) -> Result<BTreeMap<String, f64>, BackendError> {
    let mut out = BTreeMap::new();
    for target in targets {
        let spellings = variants.variants_of(target);
        let mut seen = std::collections::HashSet::new();
        let matched: Vec<f64> = alternatives
            .iter()
            .filter(|(tok, _)| spellings.iter().any(|s| s == tok) && seen.insert(tok.as_str()))
            .map(|(_, lp)| *lp)
            .collect();
        if matched.is_empty() {
            return Err(BackendError::TargetUnscored {
                target: target.clone(),
                available: alternatives.iter().map(|(t, _)| t.clone()).collect(),
            });
        }
        out.insert(target.clone(), log_sum_exp(&matched));
    }
    Ok(out)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Fixture,
    Http,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    4
}

fn default_retry_budget() -> u32 {
    2
}

/// How to reach one backend. Credentials are read from the environment
/// variable named by `api_key_env` and never stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    pub model_id: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub token_variants: TokenVariants,
}

impl BackendDescriptor {
    pub fn fixture(path: impl Into<PathBuf>, model_id: impl Into<String>) -> Self {
        BackendDescriptor {
            kind: BackendKind::Fixture,
            endpoint: None,
            fixture: Some(path.into()),
            model_id: model_id.into(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_max_in_flight(),
            retry_budget: default_retry_budget(),
            api_key_env: None,
            token_variants: TokenVariants::default(),
        }
    }

    pub fn http(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        BackendDescriptor {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            fixture: None,
            ..BackendDescriptor::fixture(PathBuf::new(), model_id)
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight == 0 {
            return Err(BackendError::Config(
                "max_in_flight must be positive".into(),
            ));
        }
        match self.kind {
            BackendKind::Http => {
                let endpoint = self.endpoint.as_deref().ok_or_else(|| {
                    BackendError::Config("http backend requires `endpoint`".into())
                })?;
                reqwest::Url::parse(endpoint).map_err(|e| {
                    BackendError::Config(format!("invalid endpoint {endpoint:?}: {e}"))
                })?;
            }
            BackendKind::Fixture => {
                let path = self.fixture.as_ref().ok_or_else(|| {
                    BackendError::Config("fixture backend requires `fixture`".into())
                })?;
                if !path.is_file() {
                    return Err(BackendError::Config(format!(
                        "fixture file {} is not readable",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn open_embedder(desc: &BackendDescriptor) -> Result<Arc<dyn EmbeddingBackend>, BackendError> {
    desc.validate()?;
    Ok(match desc.kind {
        BackendKind::Fixture => Arc::new(FixtureEmbedder::from_descriptor(desc)?),
        BackendKind::Http => Arc::new(HttpEmbedder::from_descriptor(desc)?),
    })
}

pub fn open_completion(
    desc: &BackendDescriptor,
) -> Result<Arc<dyn CompletionBackend>, BackendError> {
    desc.validate()?;
    Ok(match desc.kind {
        BackendKind::Fixture => Arc::new(FixtureCompletion::from_descriptor(desc)?),
        BackendKind::Http => Arc::new(HttpCompletion::from_descriptor(desc)?),
    })
}
