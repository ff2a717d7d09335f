use std::sync::Mutex;

use serde_json::json;

use super::{
    hash_embedding, BackendError, Embedder, GenRequest, GenResponse, ModelBackend, RetryPolicy,
    MOCK_EMBEDDING_DIM,
};
use crate::index::{BackendModels, Embedding};
use crate::retrieval::OverlapScorer;

/// One scripted outcome of a generation attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    Timeout,
    Status(u16),
}

impl From<&str> for MockReply {
    fn from(s: &str) -> Self {
        MockReply::Text(s.to_string())
    }
}

/// Replies for prompts containing `contains`. Each matching attempt takes
/// the next reply; the last one repeats once the list is exhausted.
#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub contains: String,
    pub json_mode: Option<bool>,
    pub replies: Vec<MockReply>,
}

impl ScriptRule {
    fn matches(&self, req: &GenRequest) -> bool {
        req.prompt.contains(&self.contains) && self.json_mode.is_none_or(|j| j == req.json_mode)
    }
}

/// Deterministic in-process backend.
///
/// Prompts are matched against the script rules in order. Unmatched prompts
/// get a default reply derived from the prompt itself: the first line of
/// its `### Context`, `### Answer`, `### Question` or `### Current` section
/// (first one present). In JSON mode that text is returned as `output`
/// alongside every judgment key set to `true`.
#[derive(Debug)]
pub struct MockBackend {
    rules: Vec<ScriptRule>,
    cursors: Mutex<Vec<usize>>,
    constant: Option<String>,
    retry: RetryPolicy,
    dim: usize,
    log: Mutex<Vec<GenRequest>>,
}

pub const NO_CONTEXT_REPLY: &str = "No supporting context found.";
const SECTIONS: [&str; 4] = ["### Context", "### Answer", "### Question", "### Current"];

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend {
            rules: Vec::new(),
            cursors: Mutex::new(Vec::new()),
            constant: None,
            retry: RetryPolicy {
                max_attempts: 3,
                backoff_ms: 0,
            },
            dim: MOCK_EMBEDDING_DIM,
            log: Mutex::new(Vec::new()),
        }
    }

    /// A backend that answers every generation request with `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        MockBackend {
            constant: Some(text.into()),
            ..MockBackend::new()
        }
    }

    pub fn with_rule<R: Into<MockReply>>(
        mut self,
        contains: impl Into<String>,
        replies: impl IntoIterator<Item = R>,
    ) -> Self {
        self.rules.push(ScriptRule {
            contains: contains.into(),
            json_mode: None,
            replies: replies.into_iter().map(Into::into).collect(),
        });
        self.cursors.get_mut().unwrap().push(0);
        self
    }

    pub fn with_script_rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self.cursors.get_mut().unwrap().push(0);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    /// Every generation attempt seen so far.
    pub fn requests(&self) -> Vec<GenRequest> {
        self.log.lock().unwrap().clone()
    }

    fn attempt(&self, req: &GenRequest) -> Result<String, BackendError> {
        self.log.lock().unwrap().push(req.clone());
        if let Some(text) = &self.constant {
            return Ok(text.clone());
        }
        if let Some(i) = self.rules.iter().position(|r| r.matches(req)) {
            let rule = &self.rules[i];
            let reply = {
                let mut cursors = self.cursors.lock().unwrap();
                let at = cursors[i].min(rule.replies.len().saturating_sub(1));
                cursors[i] += 1;
                rule.replies.get(at).cloned()
            };
            return match reply {
                Some(MockReply::Text(t)) => Ok(t),
                Some(MockReply::Timeout) => Err(BackendError::Timeout),
                Some(MockReply::Status(status)) => Err(BackendError::Status {
                    status,
                    body: "scripted failure".into(),
                }),
                None => Ok(default_reply(req)),
            };
        }
        Ok(default_reply(req))
    }
}

fn first_line_of_section(prompt: &str, heading: &str) -> Option<String> {
    let mut lines = prompt.lines();
    lines.by_ref().find(|l| l.trim() == heading)?;
    let line = lines.map(str::trim).find(|l| !l.is_empty())?;
    if line.starts_with("###") {
        return None;
    }
    // Context entries are numbered "[n] text".
    let line = match line.strip_prefix('[').and_then(|r| r.split_once("] ")) {
        Some((n, rest)) if n.chars().all(|c| c.is_ascii_digit()) => rest,
        _ => line,
    };
    Some(line.to_string())
}

fn default_reply(req: &GenRequest) -> String {
    let text = SECTIONS
        .iter()
        .find_map(|h| first_line_of_section(&req.prompt, h))
        .unwrap_or_else(|| NO_CONTEXT_REPLY.to_string());
    if req.json_mode {
        json!({
            "relevant": true,
            "grounded": true,
            "addresses": true,
            "supported": true,
            "output": text,
        })
        .to_string()
    } else {
        text
    }
}

impl Embedder for MockBackend {
    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        hash_embedding(text, self.dim)
    }
}

impl ModelBackend for MockBackend {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        if req.prompt.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let (text, attempts) = self.retry.run(|_| self.attempt(req))?;
        GenResponse::from_text(text, req.json_mode, attempts)
    }

    fn rerank_score(&self, query: &str, doc: &str) -> Result<f64, BackendError> {
        Ok(OverlapScorer::overlap(query, doc) as f64)
    }

    fn models(&self) -> BackendModels {
        BackendModels {
            generation_model: "mock".into(),
            embedding_model: format!("mock-fnv1a-{}", self.dim),
        }
    }
}
