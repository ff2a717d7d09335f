use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, Embedder, GenRequest, GenResponse, ModelBackend, RetryPolicy};
use crate::index::{BackendModels, Embedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub generation_model: String,
    pub embedding_model: String,
    /// Base URL of a `/score` cross-encoder sidecar.
    pub rerank_url: Option<String>,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
}

/// Client for an Ollama-compatible server.
///
/// * `POST {base}/api/generate` with `stream: false`, `format: "json"` in JSON mode
/// * `POST {base}/api/embeddings`
/// * `POST {rerank}/score` taking `{"query", "document"}` and returning `{"score"}`
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    dim: AtomicUsize,
}

fn transport_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(status) => BackendError::Status {
            status,
            body: String::new(),
        },
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(
                config.timeout_secs.max(0.001),
            )))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            config,
            agent,
            dim: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(base: &str, path: &str) -> String {
        format!("{}{path}", base.trim_end_matches('/'))
    }

    /// One POST; non-2xx statuses become errors carrying the body.
    fn post_once(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        let mut resp = self
            .agent
            .post(url)
            .send_json(body)
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Protocol {
            message: format!("response is not JSON: {e}"),
            raw: text,
        })
    }

    fn post(&self, url: &str, body: &Value) -> Result<(Value, u32), BackendError> {
        self.config.retry.run(|_| self.post_once(url, body))
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let url = Self::url(&self.config.base_url, "/api/embeddings");
        let body = json!({"model": self.config.embedding_model, "prompt": text});
        let (resp, _) = self.post(&url, &body)?;
        let values: Vec<f64> = resp
            .get("embedding")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .filter(|v: &Vec<f64>| !v.is_empty())
            .ok_or_else(|| BackendError::Protocol {
                message: "no embedding in response".into(),
                raw: resp.to_string(),
            })?;
        let got = values.len();
        match self
            .dim
            .compare_exchange(0, got, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => {}
            Err(expected) if expected == got => {}
            Err(expected) => return Err(BackendError::DimensionDrift { expected, got }),
        }
        Ok(Embedding::new(values))
    }
}

impl ModelBackend for HttpBackend {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        if req.prompt.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let url = Self::url(&self.config.base_url, "/api/generate");
        let mut options = json!({"temperature": req.options.temperature});
        if let Some(seed) = req.options.seed {
            options["seed"] = json!(seed);
        }
        let mut body = json!({
            "model": self.config.generation_model,
            "prompt": req.prompt,
            "stream": false,
            "options": options,
        });
        if req.json_mode {
            body["format"] = json!("json");
        }
        let started = Instant::now();
        let (resp, attempts) = self.post(&url, &body)?;
        let text = resp
            .get("response")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol {
                message: "no response field".into(),
                raw: resp.to_string(),
            })?
            .to_string();
        let mut out = GenResponse::from_text(text, req.json_mode, attempts)?;
        out.prompt_tokens = resp.get("prompt_eval_count").and_then(Value::as_u64);
        out.completion_tokens = resp.get("eval_count").and_then(Value::as_u64);
        out.latency_ms = started.elapsed().as_millis() as u64;
        Ok(out)
    }

    fn rerank_score(&self, query: &str, doc: &str) -> Result<f64, BackendError> {
        let base = self
            .config
            .rerank_url
            .as_deref()
            .ok_or(BackendError::RerankerUnavailable)?;
        let url = Self::url(base, "/score");
        let (resp, _) = self.post(&url, &json!({"query": query, "document": doc}))?;
        resp.get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| BackendError::Protocol {
                message: "no score in response".into(),
                raw: resp.to_string(),
            })
    }

    fn has_reranker(&self) -> bool {
        self.config.rerank_url.is_some()
    }

    fn models(&self) -> BackendModels {
        BackendModels {
            generation_model: self.config.generation_model.clone(),
            embedding_model: self.config.embedding_model.clone(),
        }
    }
}
