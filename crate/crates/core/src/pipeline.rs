//! The four answering configurations compared by the evaluation suite.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{
    compose_answer_prompt, Agent, AgentConfig, GenerationMode, GraphState, TurnError,
};
use crate::backend::{GenRequest, ModelBackend};
use crate::error::{Error, Result};
use crate::eval::AnswerPipeline;
use crate::funcall::{build_query_input, FuncallConfig, Turn};
use crate::retrieval::{
    BackendScorer, Corpus, HybridRetriever, OverlapScorer, RelevanceScorer, RetrievalConfig,
    Retriever, ScoredDoc, ScorerKind, VectorRetriever,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PipelineKind {
    /// Vector top-k, one completion.
    #[serde(rename = "naive")]
    Naive,
    /// Hybrid search with compression, one completion.
    #[serde(rename = "advanced")]
    Advanced,
    /// Self-correcting agent with plain completions.
    #[serde(rename = "agent")]
    Agent,
    /// Self-correcting agent with the retry-adaptive chat function.
    #[serde(rename = "agent+funcall")]
    AgentFuncall,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 4] = [
        PipelineKind::Naive,
        PipelineKind::Advanced,
        PipelineKind::Agent,
        PipelineKind::AgentFuncall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::Naive => "naive",
            PipelineKind::Advanced => "advanced",
            PipelineKind::Agent => "agent",
            PipelineKind::AgentFuncall => "agent+funcall",
        }
    }

    pub fn generation_mode(self) -> Option<GenerationMode> {
        match self {
            PipelineKind::Agent => Some(GenerationMode::Plain),
            PipelineKind::AgentFuncall => Some(GenerationMode::FunctionCall),
            _ => None,
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PipelineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown pipeline {s:?} (expected naive, advanced, agent or agent+funcall)"
                ))
            })
    }
}

/// Picks the compression scorer for a backend.
pub fn scorer_for<'a>(
    kind: ScorerKind,
    backend: &'a dyn ModelBackend,
) -> Box<dyn RelevanceScorer + 'a> {
    match kind {
        ScorerKind::Backend => Box::new(BackendScorer(backend)),
        ScorerKind::Overlap => Box::new(OverlapScorer),
        ScorerKind::Auto if backend.has_reranker() => Box::new(BackendScorer(backend)),
        ScorerKind::Auto => Box::new(OverlapScorer),
    }
}

/// Everything needed to answer over one corpus.
pub struct PipelineRunner<'a> {
    pub kind: PipelineKind,
    pub corpus: &'a Corpus,
    pub backend: &'a dyn ModelBackend,
    pub retrieval: &'a RetrievalConfig,
    pub agent: &'a AgentConfig,
    pub funcall: &'a FuncallConfig,
}

impl PipelineRunner<'_> {
    /// Runs one turn. Single-pass pipelines report a trace-free state.
    pub fn run_turn(&self, question: &str, history: &[Turn]) -> Result<GraphState, TurnError> {
        let scorer = scorer_for(self.retrieval.scorer, self.backend);
        let hybrid = HybridRetriever {
            corpus: self.corpus,
            embedder: self.backend,
            scorer: scorer.as_ref(),
            config: self.retrieval,
        };
        if let Some(mode) = self.kind.generation_mode() {
            let agent = Agent {
                backend: self.backend,
                retriever: &hybrid,
                config: self.agent,
                funcall: self.funcall,
                mode,
            };
            return agent.run_turn(question, history);
        }
        let naive = VectorRetriever {
            corpus: self.corpus,
            embedder: self.backend,
            k: self.retrieval.rerank_top_n,
        };
        let retriever: &dyn Retriever = match self.kind {
            PipelineKind::Naive => &naive,
            _ => &hybrid,
        };
        let mut st = GraphState::new(question, history);
        let result = retriever.retrieve(&st.question).and_then(|docs| {
            self.single_answer(&st.question, history, &docs)
                .map(|a| (docs, a))
        });
        match result {
            Ok((docs, answer)) => {
                st.documents = docs;
                st.chat_history
                    .push(Turn::new(st.original_question.clone(), answer.clone()));
                st.generation = Some(answer);
                Ok(st)
            }
            Err(source) => Err(TurnError {
                source,
                state: Box::new(st),
            }),
        }
    }

    fn single_answer(
        &self,
        question: &str,
        history: &[Turn],
        docs: &[ScoredDoc],
    ) -> Result<String> {
        let persona = self.funcall.persona_config(0);
        let query_input = build_query_input(&persona, history, question, &self.funcall.templates)?;
        let prompt = compose_answer_prompt(&query_input, None, &self.agent.prompts.answer, docs);
        let options = crate::backend::DecodingOptions {
            temperature: self.agent.answer_temperature,
            seed: self.agent.answer_seed,
        };
        let resp = self
            .backend
            .generate(&GenRequest::text(prompt).with_options(options))?;
        Ok(resp.text.trim().to_string())
    }
}

impl AnswerPipeline for PipelineRunner<'_> {
    fn name(&self) -> &str {
        self.kind.as_str()
    }

    fn answer(&self, question: &str) -> Result<(Vec<String>, String)> {
        let st = self.run_turn(question, &[]).map_err(|e| e.source)?;
        let contexts = st.documents.iter().map(|d| d.text.clone()).collect();
        Ok((contexts, st.answer().to_string()))
    }
}
