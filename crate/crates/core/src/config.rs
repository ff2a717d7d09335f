//! Engine configuration, read from TOML. Every key has a default, and the
//! defaults run fully offline against the mock backend.
//!
//! ```toml
//! [index]
//! dir = "ragforge-index"
//! chunk_size = 512
//! chunk_overlap = 64
//!
//! [retrieval]
//! weights = [0.5, 0.5]      # bm25, vector
//! rrf_k = 60
//! redundancy_threshold = 0.95
//! rerank_top_n = 5
//! candidate_k = 20
//! scorer = "auto"           # auto | backend | overlap
//! bm25 = { k1 = 1.5, b = 0.75 }
//!
//! [agent]
//! max_rewrites = 3
//! max_regens = 2
//!
//! [funcall]
//! persona = "a service engineer answering from the technical manuals"
//! language = "en"           # en | zh
//!
//! [eval]
//! judge = "substring"       # substring | llm
//! question_generator = "answer"   # answer | llm
//! n_questions = 3
//!
//! [backend]
//! kind = "mock"             # mock | http
//! base_url = "http://localhost:11434"
//! generation_model = "qwen2:7b"
//! embedding_model = "nomic-embed-text"
//! timeout_secs = 120
//! max_attempts = 3
//! backoff_ms = 250
//!
//! [service]
//! pipeline = "agent+funcall"
//! trace_capacity = 100
//! ```
//!
//! `RAGFORGE_BACKEND_URL` overrides `backend.base_url`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::backend::{MockBackend, ModelBackend, RetryPolicy};
use crate::error::{Error, Result};
use crate::eval::JudgePrompts;
use crate::funcall::FuncallConfig;
use crate::index::ChunkingConfig;
use crate::pipeline::PipelineKind;
use crate::retrieval::RetrievalConfig;

pub const BACKEND_URL_ENV: &str = "RAGFORGE_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSettings {
    pub dir: PathBuf,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
}

impl Default for IndexSettings {
    fn default() -> Self {
        let c = ChunkingConfig::default();
        IndexSettings {
            dir: PathBuf::from("ragforge-index"),
            chunk_size: c.size,
            chunk_overlap: c.overlap,
        }
    }
}

impl IndexSettings {
    pub fn chunking(&self) -> ChunkingConfig {
        ChunkingConfig {
            size: self.chunk_size,
            overlap: self.chunk_overlap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    /// Case-insensitive containment; deterministic.
    #[default]
    Substring,
    /// Backend JSON judgments.
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// The answer itself stands in for each generated question.
    #[default]
    Answer,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettingsConfig {
    pub judge: JudgeKind,
    pub question_generator: GeneratorKind,
    pub n_questions: usize,
    pub prompts: JudgePrompts,
}

impl Default for EvalSettingsConfig {
    fn default() -> Self {
        EvalSettingsConfig {
            judge: JudgeKind::Substring,
            question_generator: GeneratorKind::Answer,
            n_questions: 3,
            prompts: JudgePrompts::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: String,
    pub generation_model: String,
    pub embedding_model: String,
    pub rerank_url: Option<String>,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        BackendConfig {
            kind: BackendKind::Mock,
            base_url: "http://localhost:11434".into(),
            generation_model: "qwen2:7b".into(),
            embedding_model: "nomic-embed-text".into(),
            rerank_url: None,
            timeout_secs: 120.0,
            max_attempts: retry.max_attempts,
            backoff_ms: retry.backoff_ms,
        }
    }
}

impl BackendConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            backoff_ms: self.backoff_ms,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn ModelBackend>> {
        match self.kind {
            BackendKind::Mock => Ok(Arc::new(MockBackend::new())),
            #[cfg(feature = "http")]
            BackendKind::Http => Ok(Arc::new(crate::backend::HttpBackend::new(
                crate::backend::HttpConfig {
                    base_url: self.base_url.clone(),
                    generation_model: self.generation_model.clone(),
                    embedding_model: self.embedding_model.clone(),
                    rerank_url: self.rerank_url.clone(),
                    timeout_secs: self.timeout_secs,
                    retry: self.retry(),
                },
            ))),
            #[cfg(not(feature = "http"))]
            BackendKind::Http => Err(Error::Config(
                "backend.kind = \"http\" needs the http feature".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    /// Pipeline for new chat sessions; must be agent or agent+funcall.
    pub pipeline: PipelineKind,
    /// Traces kept in memory.
    pub trace_capacity: usize,
    /// Every trace is also written here as `<id>.json` when set.
    pub trace_spill_dir: Option<PathBuf>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            pipeline: PipelineKind::AgentFuncall,
            trace_capacity: 100,
            trace_spill_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub index: IndexSettings,
    pub retrieval: RetrievalConfig,
    pub agent: AgentConfig,
    pub funcall: FuncallConfig,
    pub eval: EvalSettingsConfig,
    pub backend: BackendConfig,
    pub service: ServiceSettings,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (defaults when `None`), applies the environment
    /// override and validates.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text)?
            }
            None => EngineConfig::default(),
        };
        config.apply_env_override(std::env::var(BACKEND_URL_ENV).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env_override(&mut self, url: Option<String>) {
        if let Some(url) = url.filter(|u| !u.trim().is_empty()) {
            self.backend.base_url = url;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.retrieval.validate().map_err(cfg)?;
        self.funcall.validate().map_err(cfg)?;
        if self.index.chunk_size <= self.index.chunk_overlap {
            return Err(Error::Config(format!(
                "index.chunk_size {} must exceed index.chunk_overlap {}",
                self.index.chunk_size, self.index.chunk_overlap
            )));
        }
        if self.backend.timeout_secs.is_nan() || self.backend.timeout_secs <= 0.0 {
            return Err(Error::Config(
                "backend.timeout_secs must be positive".into(),
            ));
        }
        if self.backend.max_attempts == 0 {
            return Err(Error::Config(
                "backend.max_attempts must be at least 1".into(),
            ));
        }
        if self.eval.n_questions == 0 {
            return Err(Error::Config("eval.n_questions must be at least 1".into()));
        }
        if self.service.pipeline.generation_mode().is_none() {
            return Err(Error::Config(format!(
                "service.pipeline {} cannot hold a conversation; use agent or agent+funcall",
                self.service.pipeline
            )));
        }
        if self.service.trace_capacity == 0 {
            return Err(Error::Config(
                "service.trace_capacity must be positive".into(),
            ));
        }
        Ok(())
    }
}
