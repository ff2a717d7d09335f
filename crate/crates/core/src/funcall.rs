//! Retry-adaptive chat function: packs persona, language, detail level,
//! history and the current question into one `query_input` string, and
//! wraps a model response into a tool-call envelope for the next round.
//!
//! Packed format (sections separated by blank lines, history omitted when
//! empty):
//!
//! ```text
//! ### Detail
//! <detail template>
//!
//! ### Persona
//! <persona template>
//!
//! ### History
//! User: ...
//! Assistant: ...
//!
//! ### Current
//! <question>
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "chat-response-enhancer";
pub const FUNCTION_NAME: &str = "chat_function";

const DETAIL: &str = "### Detail";
const PERSONA: &str = "### Persona";
const HISTORY: &str = "### History";
const CURRENT: &str = "### Current";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetailLevel {
    Brief,
    Medium,
    Detailed,
}

/// 0 → brief, 1 → medium, anything higher → detailed.
pub fn prompt_by_retry(retry: u32) -> DetailLevel {
    match retry {
        0 => DetailLevel::Brief,
        1 => DetailLevel::Medium,
        _ => DetailLevel::Detailed,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user: String,
    pub assistant: String,
}

impl Turn {
    pub fn new(user: impl Into<String>, assistant: impl Into<String>) -> Self {
        Turn {
            user: user.into(),
            assistant: assistant.into(),
        }
    }
}

/// Template strings. `{persona}` in the persona templates is replaced by
/// the configured persona text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Templates {
    pub brief: String,
    pub medium: String,
    pub detailed: String,
    pub persona_en: String,
    pub persona_zh: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            brief: "Answer in one or two sentences.".into(),
            medium: "Answer in a short paragraph. Name the parts, values and steps involved."
                .into(),
            detailed: "Answer thoroughly. Walk through every step in order, give all values \
                       and tolerances from the context, note safety precautions, and say \
                       which part of the context supports each point."
                .into(),
            persona_en: "You are {persona}. Reply in English.".into(),
            persona_zh: "你是{persona}。请用中文回答。".into(),
        }
    }
}

impl Templates {
    pub fn detail(&self, level: DetailLevel) -> &str {
        match level {
            DetailLevel::Brief => &self.brief,
            DetailLevel::Medium => &self.medium,
            DetailLevel::Detailed => &self.detailed,
        }
    }

    pub fn persona(&self, language: &str, persona: &str) -> Result<String> {
        let template = match language {
            "en" => &self.persona_en,
            "zh" => &self.persona_zh,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unsupported language {other:?} (expected en or zh)"
                )))
            }
        };
        Ok(template.replace("{persona}", persona))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaConfig {
    pub persona: String,
    pub language: String,
    pub retry: u32,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        PersonaConfig {
            persona: "a service engineer answering from the technical manuals".into(),
            language: "en".into(),
            retry: 0,
        }
    }
}

impl PersonaConfig {
    pub fn with_retry(&self, retry: u32) -> Self {
        PersonaConfig {
            retry,
            ..self.clone()
        }
    }
}

/// Persona, language and templates as configured; the retry count is
/// supplied per call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuncallConfig {
    pub persona: String,
    pub language: String,
    pub templates: Templates,
}

impl Default for FuncallConfig {
    fn default() -> Self {
        let p = PersonaConfig::default();
        FuncallConfig {
            persona: p.persona,
            language: p.language,
            templates: Templates::default(),
        }
    }
}

impl FuncallConfig {
    pub fn persona_config(&self, retry: u32) -> PersonaConfig {
        PersonaConfig {
            persona: self.persona.clone(),
            language: self.language.clone(),
            retry,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.templates
            .persona(&self.language, &self.persona)
            .map(drop)
    }
}

pub fn build_query_input(
    persona: &PersonaConfig,
    history: &[Turn],
    current: &str,
    templates: &Templates,
) -> Result<String> {
    if current.trim().is_empty() {
        return Err(Error::MissingArgument("current"));
    }
    let mut out = String::new();
    out.push_str(DETAIL);
    out.push('\n');
    out.push_str(templates.detail(prompt_by_retry(persona.retry)));
    out.push_str("\n\n");
    out.push_str(PERSONA);
    out.push('\n');
    out.push_str(&templates.persona(&persona.language, &persona.persona)?);
    out.push_str("\n\n");
    if !history.is_empty() {
        out.push_str(HISTORY);
        out.push('\n');
        for turn in history {
            out.push_str("User: ");
            out.push_str(&turn.user);
            out.push_str("\nAssistant: ");
            out.push_str(&turn.assistant);
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str(CURRENT);
    out.push('\n');
    out.push_str(current.trim());
    out.push('\n');
    Ok(out)
}

/// The sections of a packed `query_input`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PackedQuery {
    pub detail: String,
    pub persona: String,
    pub history: Vec<Turn>,
    pub current: String,
}

/// Parses the packed format. Text without a `### Current` heading is taken
/// as a bare question with no history.
pub fn parse_query_input(input: &str) -> PackedQuery {
    let mut packed = PackedQuery::default();
    let mut section: Option<&str> = None;
    let mut body: Vec<&str> = Vec::new();
    let mut lines = input.lines();

    let flush = |section: Option<&str>, body: &mut Vec<&str>, packed: &mut PackedQuery| {
        let text = body.join("\n").trim_matches('\n').to_string();
        match section {
            Some(DETAIL) => packed.detail = text,
            Some(PERSONA) => packed.persona = text,
            Some(HISTORY) => packed.history = parse_history(&text),
            _ => {}
        }
        body.clear();
    };

    for line in lines.by_ref() {
        match line {
            DETAIL | PERSONA | HISTORY => {
                flush(section, &mut body, &mut packed);
                section = Some(line);
            }
            CURRENT => {
                flush(section, &mut body, &mut packed);
                section = Some(CURRENT);
                break;
            }
            _ => body.push(line),
        }
    }
    if section == Some(CURRENT) {
        packed.current = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    } else {
        packed = PackedQuery {
            current: input.trim().to_string(),
            ..PackedQuery::default()
        };
    }
    packed
}

fn parse_history(text: &str) -> Vec<Turn> {
    let mut turns: Vec<Turn> = Vec::new();
    // Which field continuation lines belong to.
    let mut in_user = true;
    for line in text.lines() {
        if let Some(u) = line.strip_prefix("User: ") {
            turns.push(Turn::new(u, ""));
            in_user = true;
        } else if let Some(a) = line.strip_prefix("Assistant: ") {
            match turns.last_mut() {
                Some(t) if t.assistant.is_empty() && in_user => t.assistant = a.to_string(),
                _ => turns.push(Turn::new("", a)),
            }
            in_user = false;
        } else if let Some(t) = turns.last_mut() {
            let field = if in_user {
                &mut t.user
            } else {
                &mut t.assistant
            };
            field.push('\n');
            field.push_str(line);
        }
    }
    turns
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub name: String,
    pub kind: PropertyKind,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Vec<PropertySpec>,
    pub required: Vec<String>,
}

impl FunctionDescriptor {
    pub fn chat() -> Self {
        FunctionDescriptor {
            name: FUNCTION_NAME.into(),
            description: "Refine an assistant response using the persona, language, detail \
                          level and conversation history packed into query_input."
                .into(),
            parameters: vec![
                PropertySpec {
                    name: "query_input".into(),
                    kind: PropertyKind::Input,
                    description: "Packed persona, language, detail level, history and \
                                  current question."
                        .into(),
                },
                PropertySpec {
                    name: "output".into(),
                    kind: PropertyKind::Output,
                    description: "The assistant's response for this round.".into(),
                },
            ],
            required: vec!["query_input".into(), "output".into()],
        }
    }

    /// JSON-schema style rendering for tool-calling APIs.
    pub fn to_schema(&self) -> serde_json::Value {
        let properties: serde_json::Map<String, serde_json::Value> = self
            .parameters
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    serde_json::json!({"type": "string", "description": p.description}),
                )
            })
            .collect();
        serde_json::json!({
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": properties,
                "required": self.required,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FunctionArgs {
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub query_input: Option<String>,
}

impl FunctionArgs {
    pub fn new(output: impl Into<String>, query_input: impl Into<String>) -> Self {
        FunctionArgs {
            output: Some(output.into()),
            query_input: Some(query_input.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInput {
    pub response: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallEnvelope {
    pub tool: String,
    pub tool_input: ToolInput,
}

pub fn invoke(
    args: &FunctionArgs,
    persona: &PersonaConfig,
    templates: &Templates,
) -> Result<ToolCallEnvelope> {
    let present = |v: &Option<String>| {
        v.as_deref()
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string)
    };
    let output = present(&args.output).ok_or(Error::MissingArgument("output"))?;
    let input = present(&args.query_input).ok_or(Error::MissingArgument("query_input"))?;
    let packed = parse_query_input(&input);
    let query = build_query_input(persona, &packed.history, &packed.current, templates)?;
    Ok(ToolCallEnvelope {
        tool: TOOL_NAME.into(),
        tool_input: ToolInput {
            response: output,
            query,
        },
    })
}
