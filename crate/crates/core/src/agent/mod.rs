//! Self-correcting question answering as an explicit state machine.
//!
//! ```text
//! retrieve -> grade_documents -> route -+-> generate -> route -+-> end
//!    ^                                  |                      |
//!    |                                  +-> transform_query <--+
//!    +----------------------------------------+    (generate may also loop to itself)
//! ```
//!
//! Every node execution appends one [`TraceEvent`]; routing decisions are
//! recorded as `route` events whose outcome names the next node.

mod prompts;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::backend::{judge_bool, BackendError, DecodingOptions, GenRequest, ModelBackend};
use crate::error::{Error, Result};
use crate::funcall::{
    build_query_input, invoke, parse_query_input, FuncallConfig, FunctionArgs, ToolCallEnvelope,
    Turn,
};
use crate::retrieval::{Retriever, ScoredDoc};

pub use prompts::{
    compose_answer_prompt, fill, render_documents, render_history, AgentPrompts, NO_CONTEXT_MARKER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeName {
    Retrieve,
    GradeDocuments,
    Generate,
    TransformQuery,
    Route,
}

impl NodeName {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeName::Retrieve => "retrieve",
            NodeName::GradeDocuments => "grade_documents",
            NodeName::Generate => "generate",
            NodeName::TransformQuery => "transform_query",
            NodeName::Route => "route",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocVerdict {
    pub chunk_id: String,
    pub relevant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub node: NodeName,
    pub input: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<DocVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// The prompt sent for generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub timestamp_ms: u64,
}

impl TraceEvent {
    fn new(node: NodeName, input: impl Into<String>, outcome: impl Into<String>) -> Self {
        TraceEvent {
            node,
            input: input.into(),
            outcome: outcome.into(),
            verdicts: Vec::new(),
            warnings: Vec::new(),
            prompt: None,
            timestamp_ms: now_ms(),
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Zeroes timestamps so traces from separate runs can be compared.
pub fn strip_timestamps(trace: &[TraceEvent]) -> Vec<TraceEvent> {
    trace
        .iter()
        .cloned()
        .map(|e| TraceEvent {
            timestamp_ms: 0,
            ..e
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentLimits {
    pub max_rewrites: u32,
    pub max_regens: u32,
}

impl Default for AgentLimits {
    fn default() -> Self {
        AgentLimits {
            max_rewrites: 3,
            max_regens: 2,
        }
    }
}

impl AgentLimits {
    /// Upper bound on work-node executions (route events excluded) in one turn.
    pub fn node_bound(&self) -> usize {
        (self.max_rewrites as usize + 1) * (self.max_regens as usize + 3) + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// One plain completion at fixed brief detail.
    #[default]
    Plain,
    /// JSON-mode completion wrapped in a tool-call envelope; detail grows
    /// with `regen_count`.
    FunctionCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub max_rewrites: u32,
    pub max_regens: u32,
    /// Decoding for final answers; judges always decode deterministically.
    pub answer_temperature: f64,
    pub answer_seed: Option<u64>,
    pub prompts: AgentPrompts,
}

impl Default for AgentConfig {
    fn default() -> Self {
        let limits = AgentLimits::default();
        AgentConfig {
            max_rewrites: limits.max_rewrites,
            max_regens: limits.max_regens,
            answer_temperature: 0.7,
            answer_seed: None,
            prompts: AgentPrompts::default(),
        }
    }
}

impl AgentConfig {
    pub fn limits(&self) -> AgentLimits {
        AgentLimits {
            max_rewrites: self.max_rewrites,
            max_regens: self.max_regens,
        }
    }

    pub fn with_limits(mut self, limits: AgentLimits) -> Self {
        self.max_rewrites = limits.max_rewrites;
        self.max_regens = limits.max_regens;
        self
    }

    fn answer_options(&self) -> DecodingOptions {
        DecodingOptions {
            temperature: self.answer_temperature,
            seed: self.answer_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphState {
    pub original_question: String,
    pub question: String,
    pub documents: Vec<ScoredDoc>,
    pub generation: Option<String>,
    pub chat_history: Vec<Turn>,
    pub rewrite_count: u32,
    pub regen_count: u32,
    pub degraded: bool,
    pub trace: Vec<TraceEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<ToolCallEnvelope>,
}

impl GraphState {
    pub fn new(question: &str, history: &[Turn]) -> Self {
        let question = question.trim().to_string();
        GraphState {
            original_question: question.clone(),
            question,
            documents: Vec::new(),
            generation: None,
            chat_history: history.to_vec(),
            rewrite_count: 0,
            regen_count: 0,
            degraded: false,
            trace: Vec::new(),
            envelope: None,
        }
    }

    pub fn answer(&self) -> &str {
        self.generation.as_deref().unwrap_or("")
    }
}

#[derive(Debug, thiserror::Error)]
#[error("turn failed: {source}")]
pub struct TurnError {
    #[source]
    pub source: Error,
    /// State at the point of failure, including the partial trace.
    pub state: Box<GraphState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Retrieve,
    Grade,
    RouteAfterGrading,
    TransformQuery,
    Generate,
    RouteAfterGeneration,
    End,
}

/// Minimum work nodes needed to reach an answer after choosing
/// transform_query: rewrite, retrieve, grade, generate.
const REWRITE_PATH_COST: usize = 4;

pub struct Agent<'a> {
    pub backend: &'a dyn ModelBackend,
    pub retriever: &'a dyn Retriever,
    pub config: &'a AgentConfig,
    pub funcall: &'a FuncallConfig,
    pub mode: GenerationMode,
}

impl Agent<'_> {
    /// Runs one turn to completion. On success the returned state's
    /// `chat_history` ends with the new (question, answer) turn.
    pub fn run_turn(&self, question: &str, history: &[Turn]) -> Result<GraphState, TurnError> {
        let mut st = GraphState::new(question, history);
        if st.question.is_empty() {
            return Err(TurnError {
                source: Error::MissingArgument("question"),
                state: Box::new(st),
            });
        }
        let limits = self.config.limits();
        let bound = limits.node_bound();
        let mut executed = 0usize;
        let mut step = Step::Retrieve;

        while step != Step::End {
            let work = matches!(
                step,
                Step::Retrieve | Step::Grade | Step::TransformQuery | Step::Generate
            );
            let next = match step {
                Step::Retrieve => self.retrieve(&mut st),
                Step::Grade => Ok(self.grade_documents(&mut st)),
                Step::RouteAfterGrading => {
                    Ok(self.route_after_grading(&mut st, limits, bound.saturating_sub(executed)))
                }
                Step::TransformQuery => Ok(self.transform_query(&mut st)),
                Step::Generate => self.generate(&mut st),
                Step::RouteAfterGeneration => Ok(self.route_after_generation(
                    &mut st,
                    limits,
                    bound.saturating_sub(executed),
                )),
                Step::End => unreachable!(),
            };
            if work {
                executed += 1;
            }
            match next {
                Ok(s) => step = s,
                Err(source) => {
                    return Err(TurnError {
                        source,
                        state: Box::new(st),
                    })
                }
            }
        }

        let answer = st.answer().to_string();
        st.chat_history
            .push(Turn::new(st.original_question.clone(), answer));
        Ok(st)
    }

    fn retrieve(&self, st: &mut GraphState) -> Result<Step> {
        match self.retriever.retrieve(&st.question) {
            Ok(docs) => {
                let outcome = format!("{} documents", docs.len());
                st.documents = docs;
                st.trace
                    .push(TraceEvent::new(NodeName::Retrieve, &st.question, outcome));
                Ok(Step::Grade)
            }
            Err(e) => {
                st.trace.push(TraceEvent::new(
                    NodeName::Retrieve,
                    &st.question,
                    format!("error: {e}"),
                ));
                Err(e)
            }
        }
    }

    fn grade_documents(&self, st: &mut GraphState) -> Step {
        let mut event = TraceEvent::new(
            NodeName::GradeDocuments,
            format!("{} documents", st.documents.len()),
            "",
        );
        let docs = std::mem::take(&mut st.documents);
        let mut kept = Vec::new();
        for doc in docs {
            let prompt = fill(
                &self.config.prompts.grade,
                &[("question", &st.question), ("document", &doc.text)],
            );
            let (relevant, warning) = match judge_bool(self.backend, &prompt, "relevant") {
                Ok(v) => (v, None),
                Err(e) => (false, Some(e.to_string())),
            };
            if let Some(w) = &warning {
                event.warnings.push(format!("{}: {w}", doc.chunk_id));
            }
            event.verdicts.push(DocVerdict {
                chunk_id: doc.chunk_id.clone(),
                relevant,
                warning,
            });
            if relevant {
                kept.push(doc);
            }
        }
        event.outcome = format!("{} kept", kept.len());
        st.documents = kept;
        st.trace.push(event);
        Step::RouteAfterGrading
    }

    fn route_after_grading(
        &self,
        st: &mut GraphState,
        limits: AgentLimits,
        remaining: usize,
    ) -> Step {
        let mut event = TraceEvent::new(NodeName::Route, "after grade_documents", "");
        let next = if !st.documents.is_empty() {
            Step::Generate
        } else if st.rewrite_count < limits.max_rewrites && remaining >= REWRITE_PATH_COST {
            Step::TransformQuery
        } else {
            st.degraded = true;
            event
                .warnings
                .push(if st.rewrite_count < limits.max_rewrites {
                    "node budget reached".into()
                } else {
                    "rewrite budget exhausted".into()
                });
            Step::Generate
        };
        event.outcome = step_label(next).into();
        st.trace.push(event);
        next
    }

    fn transform_query(&self, st: &mut GraphState) -> Step {
        let reason = match &st.generation {
            None => "no retrieved document was relevant".to_string(),
            Some(g) => format!("the previous answer did not address the question: {g}"),
        };
        let prompt = fill(
            &self.config.prompts.rewrite,
            &[
                ("question", &st.original_question),
                ("history", &render_history(&st.chat_history)),
                ("reason", &reason),
            ],
        );
        let before = st.question.clone();
        let mut event = TraceEvent::new(NodeName::TransformQuery, &before, "");
        match self.backend.generate(&GenRequest::text(prompt)) {
            Ok(resp) => match resp.text.lines().map(str::trim).find(|l| !l.is_empty()) {
                Some(line) => st.question = line.to_string(),
                None => event.warnings.push("empty rewrite; question kept".into()),
            },
            Err(e) => event
                .warnings
                .push(format!("rewrite failed, question kept: {e}")),
        }
        st.rewrite_count += 1;
        event.outcome = st.question.clone();
        st.trace.push(event);
        Step::Retrieve
    }

    /// The prompt for the generate node and, in function-call mode, the
    /// packed query input it was built from.
    pub fn generation_prompt(&self, st: &GraphState) -> Result<(String, String)> {
        let retry = match self.mode {
            GenerationMode::Plain => 0,
            GenerationMode::FunctionCall => st.regen_count,
        };
        let persona = self.funcall.persona_config(retry);
        let history = match &st.envelope {
            Some(env) => parse_query_input(&env.tool_input.query).history,
            None => st.chat_history.clone(),
        };
        let query_input =
            build_query_input(&persona, &history, &st.question, &self.funcall.templates)?;
        let (previous, instruction) = match self.mode {
            GenerationMode::Plain => (None, &self.config.prompts.answer),
            GenerationMode::FunctionCall => (
                st.envelope.as_ref().map(|e| e.tool_input.response.as_str()),
                &self.config.prompts.answer_json,
            ),
        };
        let prompt = compose_answer_prompt(&query_input, previous, instruction, &st.documents);
        Ok((prompt, query_input))
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let options = self.config.answer_options();
        match self.mode {
            GenerationMode::Plain => {
                let resp = self
                    .backend
                    .generate(&GenRequest::text(prompt).with_options(options))?;
                Ok(resp.text.trim().to_string())
            }
            GenerationMode::FunctionCall => {
                let resp = self
                    .backend
                    .generate(&GenRequest::json(prompt).with_options(options))?;
                resp.json
                    .as_ref()
                    .and_then(|v| v.get("output"))
                    .and_then(|v| v.as_str())
                    .map(|s| s.trim().to_string())
                    .ok_or_else(|| BackendError::MissingKey {
                        key: "output".into(),
                        raw: resp.text.clone(),
                    })
            }
        }
    }

    fn generate(&self, st: &mut GraphState) -> Result<Step> {
        let (prompt, query_input) = self.generation_prompt(st)?;
        let mut event = TraceEvent::new(NodeName::Generate, &st.question, "");
        event.prompt = Some(prompt.clone());
        // One immediate retry on top of the backend's own policy.
        let result = self.complete(&prompt).or_else(|e| {
            event.warnings.push(format!("first attempt failed: {e}"));
            self.complete(&prompt)
        });
        let text = match result {
            Ok(t) => t,
            Err(e) => {
                event.outcome = format!("error: {e}");
                st.trace.push(event);
                return Err(e.into());
            }
        };
        if self.mode == GenerationMode::FunctionCall && !text.is_empty() {
            let args = FunctionArgs::new(text.clone(), query_input);
            let persona = self.funcall.persona_config(st.regen_count);
            match invoke(&args, &persona, &self.funcall.templates) {
                Ok(env) => st.envelope = Some(env),
                Err(e) => event.warnings.push(format!("envelope: {e}")),
            }
        }
        event.outcome = if text.is_empty() {
            "empty".into()
        } else {
            "generated".into()
        };
        st.generation = Some(text);
        st.trace.push(event);
        Ok(Step::RouteAfterGeneration)
    }

    fn judge(
        &self,
        template: &str,
        key: &str,
        st: &GraphState,
        warnings: &mut Vec<String>,
    ) -> bool {
        let generation = st.answer();
        if generation.is_empty() {
            warnings.push(format!("{key}: empty generation"));
            return false;
        }
        let prompt = fill(
            template,
            &[
                ("question", &st.question),
                ("documents", &render_documents(&st.documents)),
                ("generation", generation),
            ],
        );
        judge_bool(self.backend, &prompt, key).unwrap_or_else(|e| {
            warnings.push(format!("{key}: {e}"));
            false
        })
    }

    fn route_after_generation(
        &self,
        st: &mut GraphState,
        limits: AgentLimits,
        remaining: usize,
    ) -> Step {
        let mut event = TraceEvent::new(NodeName::Route, "after generate", "");
        let grounded = self.judge(
            &self.config.prompts.grounded,
            "grounded",
            st,
            &mut event.warnings,
        );
        let addresses = self.judge(
            &self.config.prompts.addresses,
            "addresses",
            st,
            &mut event.warnings,
        );
        let next = if grounded && addresses {
            Step::End
        } else if !grounded && st.regen_count < limits.max_regens && remaining >= 1 {
            st.regen_count += 1;
            Step::Generate
        } else if grounded
            && st.rewrite_count < limits.max_rewrites
            && remaining >= REWRITE_PATH_COST
        {
            Step::TransformQuery
        } else {
            st.degraded = true;
            event.warnings.push("budget exhausted".into());
            Step::End
        };
        event.input = format!("after generate (grounded={grounded}, addresses={addresses})");
        event.outcome = step_label(next).into();
        st.trace.push(event);
        next
    }
}

fn step_label(step: Step) -> &'static str {
    match step {
        Step::Generate => "generate",
        Step::TransformQuery => "transform_query",
        Step::End => "end",
        Step::Retrieve => "retrieve",
        Step::Grade => "grade_documents",
        Step::RouteAfterGrading | Step::RouteAfterGeneration => "route",
    }
}
