//! Model access: generation (plain and JSON-constrained), embeddings,
//! boolean judgments and cross-encoder scores.
//!
//! [`MockBackend`] answers deterministically from a script and needs no
//! network; [`HttpBackend`] speaks the Ollama-compatible protocol.

#[cfg(feature = "http")]
mod http;
mod mock;

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::index::{BackendModels, Embedding};
use crate::text::{terms, tokenize};

#[cfg(feature = "http")]
pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockReply, ScriptRule};

pub const MOCK_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {message}; raw: {raw}")]
    Protocol { message: String, raw: String },
    #[error("missing key: {key}")]
    MissingKey { key: String, raw: String },
    #[error("empty input")]
    EmptyInput,
    #[error("reranker unavailable")]
    RerankerUnavailable,
    #[error("embedding dimension changed from {expected} to {got}")]
    DimensionDrift { expected: usize, got: usize },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingOptions {
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl DecodingOptions {
    /// Reproducible decoding for grading and judging calls.
    pub const DETERMINISTIC: DecodingOptions = DecodingOptions {
        temperature: 0.0,
        seed: Some(42),
    };
}

impl Default for DecodingOptions {
    fn default() -> Self {
        DecodingOptions::DETERMINISTIC
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub json_mode: bool,
    pub options: DecodingOptions,
}

impl GenRequest {
    pub fn text(prompt: impl Into<String>) -> Self {
        GenRequest {
            prompt: prompt.into(),
            json_mode: false,
            options: DecodingOptions::default(),
        }
    }

    pub fn json(prompt: impl Into<String>) -> Self {
        GenRequest {
            json_mode: true,
            ..GenRequest::text(prompt)
        }
    }

    pub fn with_options(mut self, options: DecodingOptions) -> Self {
        self.options = options;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub text: String,
    /// Parsed body when the request was in JSON mode.
    pub json: Option<Value>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub latency_ms: u64,
    /// Attempts made, including the successful one.
    pub attempts: u32,
}

impl GenResponse {
    /// Builds a response, parsing `text` when `json_mode` is set.
    pub fn from_text(text: String, json_mode: bool, attempts: u32) -> Result<Self, BackendError> {
        let json = if json_mode {
            Some(serde_json::from_str::<Value>(text.trim()).map_err(|e| {
                BackendError::Protocol {
                    message: format!("JSON mode response does not parse: {e}"),
                    raw: text.clone(),
                }
            })?)
        } else {
            None
        };
        Ok(GenResponse {
            text,
            json,
            prompt_tokens: None,
            completion_tokens: None,
            latency_ms: 0,
            attempts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 250,
        }
    }
}

impl RetryPolicy {
    /// Runs `attempt` until it succeeds, fails with a non-retryable error,
    /// or `max_attempts` is reached. Returns the value and the number of
    /// attempts made.
    pub fn run<T>(
        &self,
        mut attempt: impl FnMut(u32) -> Result<T, BackendError>,
    ) -> Result<(T, u32), BackendError> {
        let max = self.max_attempts.max(1);
        let mut n = 1;
        loop {
            match attempt(n) {
                Ok(v) => return Ok((v, n)),
                Err(e) if e.is_retryable() && n < max => {
                    let delay = self.backoff_ms.saturating_mul(1 << (n - 1).min(16));
                    if delay > 0 {
                        thread::sleep(Duration::from_millis(delay));
                    }
                    log::debug!("attempt {n} failed ({e}), retrying");
                    n += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

pub trait Embedder {
    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
}

pub trait ModelBackend: Embedder + Send + Sync {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError>;

    /// Cross-encoder relevance of `doc` to `query`; higher is more relevant.
    fn rerank_score(&self, query: &str, doc: &str) -> Result<f64, BackendError>;

    /// Whether `rerank_score` can succeed.
    fn has_reranker(&self) -> bool {
        true
    }

    fn models(&self) -> BackendModels;
}

/// Reads a boolean verdict stored under `key`. Accepts JSON booleans and
/// the strings "true"/"false"/"yes"/"no" in any case.
pub fn parse_judgment(value: &Value, key: &str, raw: &str) -> Result<bool, BackendError> {
    let missing = || BackendError::MissingKey {
        key: key.to_string(),
        raw: raw.to_string(),
    };
    match value.get(key).ok_or_else(missing)? {
        Value::Bool(b) => Ok(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "true" => Ok(true),
            "no" | "false" => Ok(false),
            _ => Err(BackendError::Protocol {
                message: format!("{key} is not a boolean"),
                raw: raw.to_string(),
            }),
        },
        _ => Err(BackendError::Protocol {
            message: format!("{key} is not a boolean"),
            raw: raw.to_string(),
        }),
    }
}

/// Asks for a JSON object and reads the boolean under `key`.
pub fn judge_bool(
    backend: &dyn ModelBackend,
    prompt: &str,
    key: &str,
) -> Result<bool, BackendError> {
    let resp = backend.generate(&GenRequest::json(prompt))?;
    match &resp.json {
        Some(v) => parse_judgment(v, key, &resp.text),
        None => {
            let v: Value =
                serde_json::from_str(resp.text.trim()).map_err(|e| BackendError::Protocol {
                    message: e.to_string(),
                    raw: resp.text.clone(),
                })?;
            parse_judgment(&v, key, &resp.text)
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Feature-hashing embedding: each term is hashed with FNV-1a into one of
/// `dim` buckets, bucket counts are L2-normalized. Texts made only of
/// punctuation fall back to their raw lowercase tokens.
pub fn hash_embedding(text: &str, dim: usize) -> Result<Embedding, BackendError> {
    let mut tokens = terms(text);
    if tokens.is_empty() {
        tokens = tokenize(text).into_iter().map(str::to_lowercase).collect();
    }
    if tokens.is_empty() || dim == 0 {
        return Err(BackendError::EmptyInput);
    }
    let mut counts = vec![0.0f64; dim];
    for t in &tokens {
        counts[(fnv1a(t.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    Ok(Embedding::new(
        counts.into_iter().map(|c| c / norm).collect(),
    ))
}
