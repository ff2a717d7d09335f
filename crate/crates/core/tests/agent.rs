use std::path::Path;
use std::sync::Mutex;

use proptest::prelude::*;
use ragforge_core::agent::{
    strip_timestamps, Agent, AgentConfig, AgentLimits, GenerationMode, NodeName, TraceEvent,
    NO_CONTEXT_MARKER,
};
use ragforge_core::backend::{MockBackend, MockReply};
use ragforge_core::funcall::{FuncallConfig, Turn, TOOL_NAME};
use ragforge_core::retrieval::{Retriever, ScoredDoc};
use ragforge_core::{Error, Result};
use serde::Deserialize;

const GRADE: &str = "helps answer a question";
const GROUNDED: &str = "supported by its context";
const ADDRESSES: &str = "addresses a question";
const REWRITE: &str = "Rewrite the question";

/// Returns the same documents for every query and records the queries.
struct FixedRetriever {
    docs: Vec<ScoredDoc>,
    queries: Mutex<Vec<String>>,
}

impl FixedRetriever {
    fn manual() -> Self {
        FixedRetriever {
            docs: vec![
                ScoredDoc::new(
                    "abs.json#0",
                    "Replace the brake fluid every two years.",
                    0.03,
                    1,
                ),
                ScoredDoc::new(
                    "abs.json#1",
                    "Use only DOT 4 brake fluid from a sealed container.",
                    0.02,
                    2,
                ),
            ],
            queries: Mutex::new(Vec::new()),
        }
    }
}

impl Retriever for FixedRetriever {
    fn retrieve(&self, query: &str) -> Result<Vec<ScoredDoc>> {
        self.queries.lock().unwrap().push(query.to_string());
        Ok(self.docs.clone())
    }
}

struct FailingRetriever;

impl Retriever for FailingRetriever {
    fn retrieve(&self, _query: &str) -> Result<Vec<ScoredDoc>> {
        Err(Error::NotFound("index".into()))
    }
}

#[derive(Debug, Deserialize, PartialEq)]
struct Step {
    node: NodeName,
    input: String,
    outcome: String,
}

fn golden(name: &str) -> Vec<Step> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/golden")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn steps(trace: &[TraceEvent]) -> Vec<Step> {
    trace
        .iter()
        .map(|e| Step {
            node: e.node,
            input: e.input.clone(),
            outcome: e.outcome.clone(),
        })
        .collect()
}

fn json_bool(key: &str, v: bool) -> String {
    format!("{{\"{key}\": {v}}}")
}

fn work_nodes(trace: &[TraceEvent]) -> usize {
    trace.iter().filter(|e| e.node != NodeName::Route).count()
}

fn count(trace: &[TraceEvent], node: NodeName) -> usize {
    trace.iter().filter(|e| e.node == node).count()
}

fn run(
    backend: &MockBackend,
    retriever: &dyn Retriever,
    config: &AgentConfig,
    mode: GenerationMode,
    question: &str,
    history: &[Turn],
) -> std::result::Result<ragforge_core::agent::GraphState, ragforge_core::agent::TurnError> {
    let funcall = FuncallConfig::default();
    Agent {
        backend,
        retriever,
        config,
        funcall: &funcall,
        mode,
    }
    .run_turn(question, history)
}

#[test]
fn happy_path_matches_golden_trace() {
    let backend = MockBackend::new();
    let retriever = FixedRetriever::manual();
    let config = AgentConfig::default();
    let q = "How often should the brake fluid be replaced?";
    let st = run(&backend, &retriever, &config, GenerationMode::Plain, q, &[]).unwrap();
    assert_eq!(steps(&st.trace), golden("agent_happy_trace.json"));
    assert_eq!(st.answer(), "Replace the brake fluid every two years.");
    assert!(!st.degraded);
    assert_eq!(st.chat_history, [Turn::new(q, st.answer())]);
    assert!(st.trace[1].verdicts.iter().all(|v| v.relevant));
    assert!(st.trace[3]
        .prompt
        .as_deref()
        .unwrap()
        .contains("[2] Use only DOT 4"));
}

#[test]
fn always_irrelevant_rewrites_three_times_then_degrades() {
    let backend = MockBackend::new()
        .with_rule(GRADE, [json_bool("relevant", false).as_str()])
        .with_rule(
            REWRITE,
            ["flux capacitor location in the service manual\nextra line"],
        );
    let retriever = FixedRetriever::manual();
    let config = AgentConfig::default();
    let st = run(
        &backend,
        &retriever,
        &config,
        GenerationMode::Plain,
        "Where is the flux capacitor?",
        &[],
    )
    .unwrap();
    assert_eq!(steps(&st.trace), golden("agent_degraded_trace.json"));
    assert_eq!(count(&st.trace, NodeName::TransformQuery), 3);
    assert_eq!(st.rewrite_count, 3);
    assert!(st.degraded);
    assert_eq!(st.answer(), NO_CONTEXT_MARKER);
    assert_eq!(st.trace[14].warnings, ["rewrite budget exhausted"]);
    // Every rewrite starts again from the user's own words.
    let rewrites: Vec<_> = backend
        .requests()
        .into_iter()
        .filter(|r| r.prompt.contains(REWRITE))
        .collect();
    assert!(rewrites.iter().all(|r| r
        .prompt
        .contains("### Question\nWhere is the flux capacitor?")));
}

#[test]
fn ungrounded_answers_regenerate_up_to_the_limit() {
    let backend = MockBackend::new().with_rule(GROUNDED, [json_bool("grounded", false).as_str()]);
    let retriever = FixedRetriever::manual();
    let config = AgentConfig::default();
    let st = run(
        &backend,
        &retriever,
        &config,
        GenerationMode::Plain,
        "fluid?",
        &[],
    )
    .unwrap();
    assert_eq!(count(&st.trace, NodeName::Generate), 3);
    assert_eq!(st.regen_count, 2);
    assert!(st.degraded);
    assert_eq!(st.trace.last().unwrap().outcome, "end");
}

#[test]
fn grounded_but_off_topic_rewrites() {
    let backend = MockBackend::new()
        .with_rule(
            ADDRESSES,
            [
                json_bool("addresses", false).as_str(),
                json_bool("addresses", true).as_str(),
            ],
        )
        .with_rule(REWRITE, ["brake fluid replacement interval"]);
    let retriever = FixedRetriever::manual();
    let config = AgentConfig::default();
    let st = run(
        &backend,
        &retriever,
        &config,
        GenerationMode::Plain,
        "fluid?",
        &[],
    )
    .unwrap();
    let nodes: Vec<NodeName> = st.trace.iter().map(|e| e.node).collect();
    use NodeName::*;
    assert_eq!(
        nodes,
        [
            Retrieve,
            GradeDocuments,
            Route,
            Generate,
            Route,
            TransformQuery,
            Retrieve,
            GradeDocuments,
            Route,
            Generate,
            Route
        ]
    );
    assert_eq!(
        *retriever.queries.lock().unwrap(),
        ["fluid?", "brake fluid replacement interval"]
    );
    assert!(!st.degraded);
}

#[test]
fn retrieval_failure_keeps_partial_trace() {
    let backend = MockBackend::new();
    let config = AgentConfig::default();
    let err = run(
        &backend,
        &FailingRetriever,
        &config,
        GenerationMode::Plain,
        "q",
        &[],
    )
    .unwrap_err();
    assert!(matches!(err.source, Error::NotFound(_)));
    assert_eq!(err.state.trace.len(), 1);
    assert!(err.state.trace[0].outcome.starts_with("error: "));
}

#[test]
fn empty_question_is_rejected() {
    let backend = MockBackend::new();
    let config = AgentConfig::default();
    let err = run(
        &backend,
        &FixedRetriever::manual(),
        &config,
        GenerationMode::Plain,
        "  ",
        &[],
    )
    .unwrap_err();
    assert!(matches!(err.source, Error::MissingArgument(_)));
}

#[test]
fn generation_gets_one_extra_attempt() {
    let backend = MockBackend::new().with_rule(
        "### Instructions",
        [
            MockReply::Status(503),
            MockReply::Status(503),
            MockReply::Status(503),
            MockReply::Text("Every two years.".into()),
        ],
    );
    let config = AgentConfig::default();
    let st = run(
        &backend,
        &FixedRetriever::manual(),
        &config,
        GenerationMode::Plain,
        "fluid?",
        &[],
    )
    .unwrap();
    assert_eq!(st.answer(), "Every two years.");
    assert_eq!(st.trace[3].warnings.len(), 1);

    let dead = MockBackend::new().with_rule("### Instructions", [MockReply::Timeout]);
    let err = run(
        &dead,
        &FixedRetriever::manual(),
        &config,
        GenerationMode::Plain,
        "fluid?",
        &[],
    )
    .unwrap_err();
    assert_eq!(err.state.trace.last().unwrap().node, NodeName::Generate);
    assert!(err
        .state
        .trace
        .last()
        .unwrap()
        .outcome
        .starts_with("error: "));
}

#[test]
fn history_reaches_the_generation_prompt() {
    let backend = MockBackend::new();
    let config = AgentConfig::default();
    let history = [Turn::new("Which fluid does the ABS use?", "DOT 4.")];
    let st = run(
        &backend,
        &FixedRetriever::manual(),
        &config,
        GenerationMode::FunctionCall,
        "How often is it replaced?",
        &history,
    )
    .unwrap();
    let prompt = st.trace[3].prompt.as_deref().unwrap();
    assert!(
        prompt.contains("### History\nUser: Which fluid does the ABS use?\nAssistant: DOT 4.\n"),
        "{prompt}"
    );
    assert_eq!(st.chat_history.len(), 2);
    assert_eq!(st.chat_history[1].user, "How often is it replaced?");
}

#[test]
fn function_call_regeneration_raises_detail() {
    let backend = MockBackend::new().with_rule(
        GROUNDED,
        [
            json_bool("grounded", false).as_str(),
            json_bool("grounded", false).as_str(),
            json_bool("grounded", true).as_str(),
        ],
    );
    let config = AgentConfig::default();
    let st = run(
        &backend,
        &FixedRetriever::manual(),
        &config,
        GenerationMode::FunctionCall,
        "fluid?",
        &[],
    )
    .unwrap();
    let prompts: Vec<&str> = st
        .trace
        .iter()
        .filter_map(|e| e.prompt.as_deref())
        .collect();
    assert_eq!(prompts.len(), 3);
    assert!(prompts[0].starts_with("### Detail\nAnswer in one or two sentences.\n"));
    assert!(prompts[1].starts_with("### Detail\nAnswer in a short paragraph."));
    assert!(prompts[2].starts_with("### Detail\nAnswer thoroughly."));
    assert!(!prompts[0].contains("### Previous response"));
    assert!(
        prompts[1].contains("### Previous response\nReplace the brake fluid every two years.\n")
    );
    let env = st.envelope.as_ref().unwrap();
    assert_eq!(env.tool, TOOL_NAME);
    assert!(env
        .tool_input
        .query
        .starts_with("### Detail\nAnswer thoroughly."));
    assert!(!st.degraded);
}

#[test]
fn function_call_without_output_key_fails_generation() {
    let backend = MockBackend::new().with_rule("### Instructions", [r#"{"answer": "x"}"#]);
    let config = AgentConfig::default();
    let err = run(
        &backend,
        &FixedRetriever::manual(),
        &config,
        GenerationMode::FunctionCall,
        "fluid?",
        &[],
    )
    .unwrap_err();
    assert!(err.source.to_string().contains("output"), "{}", err.source);
}

#[test]
fn runs_are_deterministic() {
    let config = AgentConfig::default();
    let make = || {
        MockBackend::new()
            .with_rule(
                GRADE,
                [
                    json_bool("relevant", false).as_str(),
                    json_bool("relevant", true).as_str(),
                ],
            )
            .with_rule(REWRITE, ["brake fluid interval"])
    };
    let a = run(
        &make(),
        &FixedRetriever::manual(),
        &config,
        GenerationMode::FunctionCall,
        "fluid?",
        &[],
    )
    .unwrap();
    let b = run(
        &make(),
        &FixedRetriever::manual(),
        &config,
        GenerationMode::FunctionCall,
        "fluid?",
        &[],
    )
    .unwrap();
    assert_eq!(strip_timestamps(&a.trace), strip_timestamps(&b.trace));
    assert_eq!(a.answer(), b.answer());
}

#[test]
fn adversarial_constant_backends_stay_within_bound() {
    let config = AgentConfig::default();
    let bound = config.limits().node_bound();
    assert_eq!(bound, 21);
    for constant in [
        "",
        "I cannot help with that.",
        r#"{"relevant": true, "grounded": false, "addresses": false, "output": "x"}"#,
        r#"{"relevant": false, "grounded": true, "addresses": false, "output": "x"}"#,
        r#"{"relevant": true, "grounded": true, "addresses": false, "output": "x"}"#,
    ] {
        for mode in [GenerationMode::Plain, GenerationMode::FunctionCall] {
            let backend = MockBackend::constant(constant);
            let trace = match run(
                &backend,
                &FixedRetriever::manual(),
                &config,
                mode,
                "fluid?",
                &[],
            ) {
                Ok(st) => st.trace,
                Err(e) => e.state.trace,
            };
            assert!(
                work_nodes(&trace) <= bound,
                "{constant:?} {mode:?}: {}",
                work_nodes(&trace)
            );
        }
    }
}

/// Checks that consecutive events follow edges of the agent graph.
fn valid_path(trace: &[TraceEvent]) -> bool {
    use NodeName::*;
    let Some(first) = trace.first() else {
        return false;
    };
    if first.node != Retrieve {
        return false;
    }
    for w in trace.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ok = match a.node {
            Retrieve => b.node == GradeDocuments,
            GradeDocuments => b.node == Route && b.input == "after grade_documents",
            TransformQuery => b.node == Retrieve,
            Generate => b.node == Route && b.input.starts_with("after generate"),
            Route => b.node.as_str() == a.outcome,
        };
        if !ok {
            return false;
        }
    }
    let last = trace.last().unwrap();
    last.node == Route && last.outcome == "end"
}

fn verdicts() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scripted_judges_respect_bound_and_graph(
        relevant in verdicts(),
        grounded in verdicts(),
        addresses in verdicts(),
        max_rewrites in 0u32..5,
        max_regens in 0u32..5,
        funcall in any::<bool>(),
    ) {
        let replies = |key: &str, v: &[bool]| v.iter().map(|&b| MockReply::Text(json_bool(key, b))).collect::<Vec<_>>();
        let backend = MockBackend::new()
            .with_rule(GRADE, replies("relevant", &relevant))
            .with_rule(GROUNDED, replies("grounded", &grounded))
            .with_rule(ADDRESSES, replies("addresses", &addresses))
            .with_rule(REWRITE, ["rewritten question"]);
        let limits = AgentLimits { max_rewrites, max_regens };
        let config = AgentConfig::default().with_limits(limits);
        let mode = if funcall { GenerationMode::FunctionCall } else { GenerationMode::Plain };
        let st = run(&backend, &FixedRetriever::manual(), &config, mode, "fluid?", &[]).unwrap();
        prop_assert!(work_nodes(&st.trace) <= limits.node_bound());
        prop_assert!(valid_path(&st.trace), "{:?}", steps(&st.trace));
        prop_assert!(st.rewrite_count <= max_rewrites);
        prop_assert!(st.regen_count <= max_regens);
        prop_assert_eq!(count(&st.trace, NodeName::TransformQuery) as u32, st.rewrite_count);
        let last = st.trace.last().unwrap();
        let accepted = last.input.ends_with("(grounded=true, addresses=true)");
        if !accepted {
            prop_assert!(st.degraded);
        }
        let warned = st.trace.iter().any(|e| e.node == NodeName::Route && !e.warnings.is_empty());
        prop_assert_eq!(st.degraded, warned);
    }
}
