//! HTTP clients for OpenAI-compatible inference servers.
//!
//! Chat completions go to `{endpoint}/chat/completions`, embeddings to
//! `{endpoint}/embeddings`. See `docs/wire-format.md` for captured request
//! and response bodies.

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    collapse_targets, BackendDescriptor, BackendError, Completion, CompletionBackend,
    CompletionRequest, EmbeddingBackend, InFlightGate, TokenVariants,
};

/// Number of first-token alternatives requested when log-probabilities are
/// needed.
const TOP_LOGPROBS: u32 = 20;

struct Transport {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
    retry_budget: u32,
    gate: InFlightGate,
}

impl Transport {
    fn new(desc: &BackendDescriptor) -> Result<Self, BackendError> {
        let endpoint = desc
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("http backend requires `endpoint`".into()))?;
        let api_key = match &desc.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = Client::builder()
            .timeout(desc.timeout())
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Transport {
            client,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key,
            retry_budget: desc.retry_budget,
            gate: InFlightGate::new(desc.max_in_flight),
        })
    }

    /// POSTs `body`, retrying transport-level failures (connect errors,
    /// timeouts, 5xx) up to the retry budget.
    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let _g = self.gate.enter();
        let url = format!("{}/{}", self.endpoint, path);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let err = match req.send() {
                Ok(resp) => match classify(resp, attempts) {
                    Ok(v) => return Ok(v),
                    Err(e) => e,
                },
                Err(e) if e.is_timeout() => BackendError::Timeout { attempts },
                Err(e) => BackendError::Transport {
                    attempts,
                    message: e.without_url().to_string(),
                },
            };
            if !err.is_transport() || attempts > self.retry_budget {
                return Err(err);
            }
        }
    }
}

fn classify(resp: Response, attempts: u32) -> Result<Value, BackendError> {
    let status = resp.status();
    if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
        return Err(BackendError::Transport {
            attempts,
            message: format!("server returned {status}"),
        });
    }
    if !status.is_success() {
        let body = resp.text().unwrap_or_default();
        return Err(BackendError::Protocol(format!(
            "server returned {status}: {body}"
        )));
    }
    resp.json::<Value>().map_err(|e| {
        if e.is_timeout() {
            BackendError::Timeout { attempts }
        } else {
            BackendError::Protocol(format!("response is not JSON: {e}"))
        }
    })
}

pub struct HttpCompletion {
    id: String,
    transport: Transport,
    variants: TokenVariants,
}

impl HttpCompletion {
    pub fn from_descriptor(desc: &BackendDescriptor) -> Result<Self, BackendError> {
        Ok(HttpCompletion {
            id: desc.model_id.clone(),
            transport: Transport::new(desc)?,
            variants: desc.token_variants.clone(),
        })
    }

    pub fn gate(&self) -> &InFlightGate {
        &self.transport.gate
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.id,
            "messages": request.messages,
            "temperature": request.sampling.temperature,
            "seed": request.sampling.seed,
            "max_tokens": request.sampling.max_tokens,
            "stream": false,
        });
        if request.logprob_targets.is_some() {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(TOP_LOGPROBS);
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

/// Parses a chat-completions response body.
pub(crate) fn parse_chat_response(
    body: Value,
    targets: Option<&[String]>,
    variants: &TokenVariants,
) -> Result<Completion, BackendError> {
    let parsed: ChatResponse = serde_json::from_value(body)
        .map_err(|e| BackendError::Protocol(format!("unexpected response shape: {e}")))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let first_token_logprobs = match targets {
        None => Default::default(),
        Some(targets) => {
            let first = choice
                .logprobs
                .and_then(|l| l.content)
                .and_then(|c| c.into_iter().next())
                .ok_or(BackendError::LogprobsUnsupported)?;
            let mut alternatives: Vec<(String, f64)> = first
                .top_logprobs
                .into_iter()
                .map(|t| (t.token, t.logprob))
                .collect();
            if !alternatives.iter().any(|(t, _)| *t == first.token) {
                alternatives.push((first.token, first.logprob));
            }
            collapse_targets(&alternatives, targets, variants)?
        }
    };
    Ok(Completion {
        text,
        first_token_logprobs,
    })
}

impl CompletionBackend for HttpCompletion {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let body = self
            .transport
            .post("chat/completions", &self.request_body(request))?;
        parse_chat_response(body, request.logprob_targets.as_deref(), &self.variants)
    }
}

pub struct HttpEmbedder {
    id: String,
    transport: Transport,
}

impl HttpEmbedder {
    pub fn from_descriptor(desc: &BackendDescriptor) -> Result<Self, BackendError> {
        Ok(HttpEmbedder {
            id: desc.model_id.clone(),
            transport: Transport::new(desc)?,
        })
    }

    pub fn gate(&self) -> &InFlightGate {
        &self.transport.gate
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl EmbeddingBackend for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = self
            .transport
            .post("embeddings", &json!({ "model": self.id, "input": texts }))?;
        let parsed: EmbeddingResponse = serde_json::from_value(body)
            .map_err(|e| BackendError::Protocol(format!("unexpected embeddings shape: {e}")))?;
        let mut data = parsed.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}
