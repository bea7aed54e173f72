use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    collapse_targets, text_key, BackendDescriptor, BackendError, Completion, CompletionBackend,
    CompletionRequest, EmbeddingBackend, InFlightGate, TokenVariants,
};
use crate::jsonl;

/// One fixture line for an embedding backend. Either `key` (SHA-256 of the
/// input text) or the raw `text` must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFixtureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub vector: Vec<f64>,
}

impl EmbeddingFixtureEntry {
    fn resolved_key(&self) -> Result<String, BackendError> {
        match (&self.key, &self.text) {
            (Some(k), _) => Ok(k.clone()),
            (None, Some(t)) => Ok(text_key(t)),
            (None, None) => Err(BackendError::Config(
                "embedding fixture entry needs `key` or `text`".into(),
            )),
        }
    }
}

/// One fixture line for a completion backend: `{key, text, logprobs}`.
/// `logprobs` holds the raw first-token alternatives; variant summation is
/// applied at replay time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionFixtureEntry {
    pub key: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<BTreeMap<String, f64>>,
    /// Free-form annotation for human readers; ignored on replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub struct FixtureEmbedder {
    id: String,
    vectors: HashMap<String, Vec<f64>>,
    gate: InFlightGate,
}

impl FixtureEmbedder {
    pub fn from_entries(
        id: impl Into<String>,
        entries: Vec<EmbeddingFixtureEntry>,
        max_in_flight: usize,
    ) -> Result<Self, BackendError> {
        let mut vectors = HashMap::with_capacity(entries.len());
        for e in entries {
            vectors.insert(e.resolved_key()?, e.vector);
        }
        Ok(FixtureEmbedder {
            id: id.into(),
            vectors,
            gate: InFlightGate::new(max_in_flight),
        })
    }

    pub fn from_reader<R: BufRead>(
        id: &str,
        reader: R,
        max_in_flight: usize,
    ) -> Result<Self, BackendError> {
        let entries =
            jsonl::parse_lines(reader, id).map_err(|e| BackendError::Config(e.to_string()))?;
        Self::from_entries(id, entries, max_in_flight)
    }

    pub fn from_descriptor(desc: &BackendDescriptor) -> Result<Self, BackendError> {
        let entries = load(desc.fixture.as_deref())?;
        Self::from_entries(desc.model_id.clone(), entries, desc.max_in_flight)
    }

    pub fn gate(&self) -> &InFlightGate {
        &self.gate
    }
}

impl EmbeddingBackend for FixtureEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let _g = self.gate.enter();
        texts
            .iter()
            .map(|t| {
                let key = text_key(t);
                self.vectors
                    .get(&key)
                    .cloned()
                    .ok_or(BackendError::MissingFixture { key })
            })
            .collect()
    }
}

pub struct FixtureCompletion {
    id: String,
    entries: HashMap<String, CompletionFixtureEntry>,
    variants: TokenVariants,
    gate: InFlightGate,
}

impl FixtureCompletion {
    pub fn from_entries(
        id: impl Into<String>,
        entries: Vec<CompletionFixtureEntry>,
        max_in_flight: usize,
    ) -> Self {
        FixtureCompletion {
            id: id.into(),
            entries: entries.into_iter().map(|e| (e.key.clone(), e)).collect(),
            variants: TokenVariants::default(),
            gate: InFlightGate::new(max_in_flight),
        }
    }

    pub fn from_descriptor(desc: &BackendDescriptor) -> Result<Self, BackendError> {
        let entries = load(desc.fixture.as_deref())?;
        let mut backend = Self::from_entries(desc.model_id.clone(), entries, desc.max_in_flight);
        backend.variants = desc.token_variants.clone();
        Ok(backend)
    }

    pub fn with_variants(mut self, variants: TokenVariants) -> Self {
        self.variants = variants;
        self
    }

    pub fn gate(&self) -> &InFlightGate {
        &self.gate
    }
}

impl CompletionBackend for FixtureCompletion {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let _g = self.gate.enter();
        let key = request.fixture_key();
        let entry = self
            .entries
            .get(&key)
            .ok_or(BackendError::MissingFixture { key })?;
        let first_token_logprobs = match &request.logprob_targets {
            None => BTreeMap::new(),
            Some(targets) => {
                let raw = entry
                    .logprobs
                    .as_ref()
                    .ok_or(BackendError::LogprobsUnsupported)?;
                let alternatives: Vec<(String, f64)> =
                    raw.iter().map(|(k, v)| (k.clone(), *v)).collect();
                collapse_targets(&alternatives, targets, &self.variants)?
            }
        };
        Ok(Completion {
            text: entry.text.clone(),
            first_token_logprobs,
        })
    }
}

fn load<T: serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<Vec<T>, BackendError> {
    let path = path.ok_or_else(|| BackendError::Config("fixture path missing".into()))?;
    jsonl::read_jsonl(path).map_err(|e| BackendError::Config(e.to_string()))
}
