//! The engine behind both frontends: ingestion, chat sessions, trace
//! retention and evaluation. Transport-agnostic; the CLI crate maps these
//! calls onto HTTP routes and a terminal REPL.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::agent::{AgentConfig, TraceEvent, TurnError};
use crate::backend::{fnv1a, ModelBackend};
use crate::config::{EngineConfig, GeneratorKind, JudgeKind};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_dataset, load_dataset, AnswerAsQuestion, EvalSettings, Judge, LlmJudge,
    LlmQuestionGenerator, MetricReport, QuestionGenerator, SubstringJudge,
};
use crate::funcall::{FuncallConfig, Turn};
use crate::index::{chunk_text, unique_suffix, VectorIndex, MANIFEST_FILE};
use crate::layout::{render_document, source_for};
use crate::pipeline::{PipelineKind, PipelineRunner};
use crate::retrieval::{Corpus, RetrievalConfig};

/// Failures as seen by a client.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    /// The model backend failed terminally; the partial trace is kept.
    #[error("backend failure: {message}")]
    Backend {
        message: String,
        trace_id: Option<String>,
        trace: Vec<TraceEvent>,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        match &e {
            Error::NotFound(_) => ServiceError::NotFound(e.to_string()),
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ServiceError::NotFound(e.to_string())
            }
            Error::Backend(_) => ServiceError::Backend {
                message: e.to_string(),
                trace_id: None,
                trace: Vec::new(),
            },
            Error::Scorer { source, .. } if matches!(**source, Error::Backend(_)) => {
                ServiceError::Backend {
                    message: e.to_string(),
                    trace_id: None,
                    trace: Vec::new(),
                }
            }
            Error::InvalidArgument(_)
            | Error::MissingArgument(_)
            | Error::Config(_)
            | Error::Input { .. }
            | Error::Layout { .. } => ServiceError::BadRequest(e.to_string()),
            _ => ServiceError::Internal(e.to_string()),
        }
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileError {
    pub path: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub chunks: usize,
    pub duration_ms: u64,
    pub errors: Vec<FileError>,
}

/// Pipeline settings captured when a session is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub pipeline: PipelineKind,
    pub retrieval: RetrievalConfig,
    pub agent: AgentConfig,
    pub funcall: FuncallConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub chat_history: Vec<Turn>,
    pub created_at_ms: u64,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub chunk_id: String,
    pub text: String,
    pub score: f64,
    pub relevance_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub answer: String,
    pub sources: Vec<Source>,
    pub degraded: bool,
    pub trace_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTrace {
    pub id: String,
    pub session_id: String,
    pub question: String,
    pub answer: Option<String>,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub events: Vec<TraceEvent>,
}

/// Most recent traces in memory, optionally mirrored to disk so older
/// ones stay retrievable after eviction.
#[derive(Debug)]
struct TraceStore {
    capacity: usize,
    spill_dir: Option<PathBuf>,
    recent: VecDeque<StoredTrace>,
}

impl TraceStore {
    fn insert(&mut self, trace: StoredTrace) {
        if let Some(dir) = &self.spill_dir {
            let path = dir.join(format!("{}.json", trace.id));
            let write = fs::create_dir_all(dir).and_then(|()| {
                fs::write(&path, serde_json::to_vec(&trace).expect("trace serializes"))
            });
            if let Err(e) = write {
                log::warn!("could not spill trace to {}: {e}", path.display());
            }
        }
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back(trace);
    }

    fn get(&self, id: &str) -> Option<StoredTrace> {
        if let Some(t) = self.recent.iter().find(|t| t.id == id) {
            return Some(t.clone());
        }
        // Ids are hex; anything else cannot name a spilled file.
        if !id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-') {
            return None;
        }
        let path = self.spill_dir.as_ref()?.join(format!("{id}.json"));
        let bytes = fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn new_id(prefix: &str) -> String {
    format!("{prefix}{:016x}", fnv1a(unique_suffix().as_bytes()))
}

pub struct Engine {
    config: EngineConfig,
    backend: Arc<dyn ModelBackend>,
    corpus: RwLock<Arc<Corpus>>,
    index_dir: PathBuf,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    traces: Mutex<TraceStore>,
    ingest_lock: Mutex<()>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        let backend = config.backend.build()?;
        Engine::with_backend(config, backend)
    }

    /// Loads the index at `config.index.dir` when one exists; otherwise
    /// starts with an empty corpus.
    pub fn with_backend(config: EngineConfig, backend: Arc<dyn ModelBackend>) -> Result<Self> {
        config.validate()?;
        let index_dir = config.index.dir.clone();
        let index = if index_dir.join(MANIFEST_FILE).exists() {
            VectorIndex::load(&index_dir)?
        } else {
            VectorIndex::new(0, config.index.chunking(), backend.models())
        };
        let traces = TraceStore {
            capacity: config.service.trace_capacity,
            spill_dir: config.service.trace_spill_dir.clone(),
            recent: VecDeque::new(),
        };
        Ok(Engine {
            corpus: RwLock::new(Arc::new(Corpus::new(index))),
            index_dir,
            backend,
            sessions: Mutex::new(HashMap::new()),
            traces: Mutex::new(traces),
            ingest_lock: Mutex::new(()),
            config,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backend(&self) -> &dyn ModelBackend {
        self.backend.as_ref()
    }

    pub fn corpus(&self) -> Arc<Corpus> {
        self.corpus.read().expect("corpus lock").clone()
    }

    pub fn index_dir(&self) -> &Path {
        &self.index_dir
    }

    /// Converts, chunks and embeds every `.pdf` and `.json` file under
    /// `path` (or `path` itself), then replaces the index on disk and in
    /// memory. Files that fail are listed and skipped.
    pub fn handle_ingest(&self, path: &Path) -> ServiceResult<IngestReport> {
        if !path.exists() {
            return Err(ServiceError::NotFound(format!("{}", path.display())));
        }
        let _guard = self.ingest_lock.lock().expect("ingest lock");
        let started = Instant::now();
        let dim = self
            .backend
            .embed("dimension probe")
            .map_err(Error::from)?
            .dim();
        let chunking = self.config.index.chunking();
        let mut index = VectorIndex::new(dim, chunking, self.backend.models());
        let mut report = IngestReport {
            documents: 0,
            chunks: 0,
            duration_ms: 0,
            errors: Vec::new(),
        };
        let index_dir = fs::canonicalize(&self.index_dir).ok();
        let files = WalkDir::new(path)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| index_dir.is_none() || fs::canonicalize(e.path()).ok() != index_dir);
        for entry in files {
            let entry = match entry {
                Ok(e) => e,
                Err(e) => {
                    report.errors.push(FileError {
                        path: e.path().map(Path::to_path_buf).unwrap_or_default(),
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let file = entry.path();
            let ext = file
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if !entry.file_type().is_file() || !matches!(ext.as_deref(), Some("pdf" | "json")) {
                continue;
            }
            // Relative to the ingest root; a single file is named by itself.
            let doc_id = match file.strip_prefix(path) {
                Ok(rel) if !rel.as_os_str().is_empty() => rel.to_string_lossy().replace('\\', "/"),
                _ => file
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            };
            match self.ingest_file(file, &doc_id, &mut index) {
                Ok(n) => {
                    report.documents += 1;
                    report.chunks += n;
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    report.errors.push(FileError {
                        path: file.to_path_buf(),
                        error: e.to_string(),
                    });
                }
            }
        }
        let mut corpus = self.corpus.write().expect("corpus lock");
        index.persist(&self.index_dir)?;
        *corpus = Arc::new(Corpus::new(index));
        report.duration_ms = started.elapsed().as_millis() as u64;
        Ok(report)
    }

    /// Adds one file's chunks to `index`; on error nothing is added.
    fn ingest_file(&self, file: &Path, doc_id: &str, index: &mut VectorIndex) -> Result<usize> {
        let pages = source_for(file)?.load_pages(file)?;
        let (markdown, _) = render_document(&pages)?;
        let chunks = chunk_text(doc_id, &markdown, self.config.index.chunking())?;
        let mut staged = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            let emb = self.backend.embed(&chunk.text)?;
            staged.push((chunk, emb));
        }
        let n = staged.len();
        for (chunk, emb) in staged {
            index.add(chunk, emb)?;
        }
        Ok(n)
    }

    /// Opens a session with the configured pipeline, or `pipeline` when given.
    pub fn create_session(&self, pipeline: Option<PipelineKind>) -> ServiceResult<Session> {
        let pipeline = pipeline.unwrap_or(self.config.service.pipeline);
        if pipeline.generation_mode().is_none() {
            return Err(ServiceError::BadRequest(format!(
                "pipeline {pipeline} cannot hold a conversation; use agent or agent+funcall"
            )));
        }
        let session = Session {
            id: new_id("s-"),
            chat_history: Vec::new(),
            created_at_ms: now_ms(),
            config: SessionConfig {
                pipeline,
                retrieval: self.config.retrieval.clone(),
                agent: self.config.agent.clone(),
                funcall: self.config.funcall.clone(),
            },
        };
        self.sessions
            .lock()
            .expect("sessions lock")
            .insert(session.id.clone(), Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn session(&self, id: &str) -> ServiceResult<Session> {
        let handle = self.session_handle(id)?;
        let session = handle.lock().expect("session lock").clone();
        Ok(session)
    }

    fn session_handle(&self, id: &str) -> ServiceResult<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    /// Runs one agent turn. Turns on the same session are serialized;
    /// different sessions run concurrently.
    pub fn handle_chat_turn(
        &self,
        session_id: &str,
        question: &str,
    ) -> ServiceResult<TurnResponse> {
        if question.trim().is_empty() {
            return Err(ServiceError::BadRequest("question is empty".into()));
        }
        let handle = self.session_handle(session_id)?;
        let mut session = handle.lock().expect("session lock");
        let corpus = self.corpus();
        let cfg = &session.config;
        let runner = PipelineRunner {
            kind: cfg.pipeline,
            corpus: &corpus,
            backend: self.backend.as_ref(),
            retrieval: &cfg.retrieval,
            agent: &cfg.agent,
            funcall: &cfg.funcall,
        };
        let trace_id = new_id("t-");
        match runner.run_turn(question, &session.chat_history) {
            Ok(state) => {
                let answer = state.answer().to_string();
                self.store_trace(StoredTrace {
                    id: trace_id.clone(),
                    session_id: session_id.to_string(),
                    question: question.to_string(),
                    answer: Some(answer.clone()),
                    degraded: state.degraded,
                    error: None,
                    events: state.trace.clone(),
                });
                let sources = state
                    .documents
                    .iter()
                    .map(|d| Source {
                        chunk_id: d.chunk_id.clone(),
                        text: d.text.clone(),
                        score: d.score,
                        relevance_score: d.relevance_score,
                    })
                    .collect();
                session.chat_history = state.chat_history;
                Ok(TurnResponse {
                    answer,
                    sources,
                    degraded: state.degraded,
                    trace_id,
                })
            }
            Err(TurnError { source, state }) => {
                self.store_trace(StoredTrace {
                    id: trace_id.clone(),
                    session_id: session_id.to_string(),
                    question: question.to_string(),
                    answer: None,
                    degraded: state.degraded,
                    error: Some(source.to_string()),
                    events: state.trace.clone(),
                });
                Err(match ServiceError::from(source) {
                    ServiceError::Backend { message, .. } => ServiceError::Backend {
                        message,
                        trace_id: Some(trace_id),
                        trace: state.trace,
                    },
                    other => other,
                })
            }
        }
    }

    fn store_trace(&self, trace: StoredTrace) {
        self.traces.lock().expect("trace lock").insert(trace);
    }

    pub fn trace(&self, id: &str) -> ServiceResult<StoredTrace> {
        self.traces
            .lock()
            .expect("trace lock")
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("trace {id}")))
    }

    /// Evaluates `pipeline` on a JSON-lines dataset over the loaded index.
    pub fn handle_eval(
        &self,
        dataset: &Path,
        pipeline: PipelineKind,
    ) -> ServiceResult<MetricReport> {
        let records = load_dataset(dataset)?;
        let corpus = self.corpus();
        self.evaluate(&records, &corpus, pipeline)
    }

    pub fn evaluate(
        &self,
        records: &[crate::eval::EvalRecord],
        corpus: &Corpus,
        pipeline: PipelineKind,
    ) -> ServiceResult<MetricReport> {
        let cfg = &self.config;
        let runner = PipelineRunner {
            kind: pipeline,
            corpus,
            backend: self.backend.as_ref(),
            retrieval: &cfg.retrieval,
            agent: &cfg.agent,
            funcall: &cfg.funcall,
        };
        let llm_judge = LlmJudge {
            backend: self.backend.as_ref(),
            prompts: &cfg.eval.prompts,
        };
        let judge: &dyn Judge = match cfg.eval.judge {
            JudgeKind::Substring => &SubstringJudge,
            JudgeKind::Llm => &llm_judge,
        };
        let llm_gen = LlmQuestionGenerator {
            backend: self.backend.as_ref(),
            prompts: &cfg.eval.prompts,
        };
        let generator: &dyn QuestionGenerator = match cfg.eval.question_generator {
            GeneratorKind::Answer => &AnswerAsQuestion,
            GeneratorKind::Llm => &llm_gen,
        };
        let settings = EvalSettings {
            judge,
            generator,
            embedder: self.backend.as_ref(),
            n_questions: cfg.eval.n_questions,
        };
        Ok(evaluate_dataset(records, &runner, &settings)?)
    }
}
