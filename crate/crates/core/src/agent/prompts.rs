use serde::{Deserialize, Serialize};

use crate::funcall::Turn;
use crate::retrieval::ScoredDoc;

/// Shown in place of contexts when nothing survived grading.
pub const NO_CONTEXT_MARKER: &str = "No supporting context found.";

/// Judge and rewrite templates. Placeholders: `{question}`, `{document}`,
/// `{documents}`, `{generation}`, `{history}`, `{reason}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentPrompts {
    pub grade: String,
    pub grounded: String,
    pub addresses: String,
    pub rewrite: String,
    pub answer: String,
    pub answer_json: String,
}

impl Default for AgentPrompts {
    fn default() -> Self {
        AgentPrompts {
            grade: "You check whether a retrieved document helps answer a question.\n\n\
                    ### Question\n{question}\n\n### Document\n{document}\n\n\
                    Reply with a JSON object {\"relevant\": true} or {\"relevant\": false}."
                .into(),
            grounded: "You check whether an answer is supported by its context.\n\n\
                       ### Context\n{documents}\n\n### Answer\n{generation}\n\n\
                       Reply with a JSON object {\"grounded\": true} if every statement in \
                       the answer follows from the context, otherwise {\"grounded\": false}."
                .into(),
            addresses: "You check whether an answer addresses a question.\n\n\
                        ### Question\n{question}\n\n### Answer\n{generation}\n\n\
                        Reply with a JSON object {\"addresses\": true} or {\"addresses\": false}."
                .into(),
            rewrite: "Rewrite the question so that a search over technical manuals finds \
                      better documents. Resolve pronouns from the conversation history. \
                      Reply with the rewritten question only.\n\n\
                      ### History\n{history}\n\n### Question\n{question}\n\n### Problem\n{reason}"
                .into(),
            answer: "Answer the current question from the context below.".into(),
            answer_json: "Answer the current question from the context below. Reply with a \
                          JSON object {\"output\": \"<answer>\"}."
                .into(),
        }
    }
}

/// Single-pass substitution of `{name}` placeholders. Unknown braces are
/// left alone, and substituted text is never rescanned.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render_documents(docs: &[ScoredDoc]) -> String {
    if docs.is_empty() {
        return NO_CONTEXT_MARKER.to_string();
    }
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("[{}] {}", i + 1, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Packed query input, then the previous response (if any), the
/// instruction and the numbered contexts.
pub fn compose_answer_prompt(
    query_input: &str,
    previous: Option<&str>,
    instruction: &str,
    docs: &[ScoredDoc],
) -> String {
    let mut prompt = query_input.to_string();
    if let Some(prev) = previous {
        prompt.push_str("\n### Previous response\n");
        prompt.push_str(prev);
        prompt.push('\n');
    }
    prompt.push_str("\n### Instructions\n");
    prompt.push_str(instruction);
    prompt.push_str("\n\n### Context\n");
    prompt.push_str(&render_documents(docs));
    prompt.push('\n');
    prompt
}

pub fn render_history(history: &[Turn]) -> String {
    if history.is_empty() {
        return "(none)".to_string();
    }
    history
        .iter()
        .map(|t| format!("User: {}\nAssistant: {}", t.user, t.assistant))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_leaves_json_braces() {
        let out = fill(
            "Q: {question} -> {\"relevant\": true}",
            &[("question", "why?")],
        );
        assert_eq!(out, "Q: why? -> {\"relevant\": true}");
    }

    #[test]
    fn fill_does_not_rescan() {
        let out = fill("{a} {b}", &[("a", "{b}"), ("b", "x")]);
        assert_eq!(out, "{b} x");
        assert_eq!(fill("tail {", &[]), "tail {");
    }

    #[test]
    fn documents_are_numbered() {
        let docs = [
            ScoredDoc::new("a", "alpha", 1.0, 1),
            ScoredDoc::new("b", "beta", 0.5, 2),
        ];
        assert_eq!(render_documents(&docs), "[1] alpha\n[2] beta");
        assert_eq!(render_documents(&[]), NO_CONTEXT_MARKER);
    }
}
