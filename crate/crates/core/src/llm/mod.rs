//! Completion backends with tool calling.

mod cassette;
mod remote;
mod scripted;
pub mod sim;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use cassette::CassetteBackend;
pub use remote::{RemoteBackend, RemoteSpec};
pub use scripted::{Rule, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::System, content: content.into(), tool_calls: Vec::new() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::User, content: content.into(), tool_calls: Vec::new() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::Assistant, content: content.into(), tool_calls: Vec::new() }
    }

    pub fn assistant_calls(calls: Vec<ToolCall>) -> Self {
        ChatTurn { role: Role::Assistant, content: String::new(), tool_calls: calls }
    }

    pub fn tool(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::Tool, content: content.into(), tool_calls: Vec::new() }
    }
}

/// Tool offered to a backend, with a JSON-schema style parameter object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum LlmError {
    #[error("no messages to complete")]
    EmptyMessages,
    #[error("context window exceeded: {needed} tokens > {window}")]
    ContextWindowExceeded { needed: usize, window: usize },
    #[error("remote backend failed: {0}")]
    Remote(String),
    #[error("no scripted rule matched")]
    NoRule,
    #[error("unknown scripted table {0:?}")]
    UnknownTable(String),
    #[error("cassette: {0}")]
    Cassette(String),
}

pub trait LlmBackend: Send {
    fn complete(&mut self, messages: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, LlmError>;

    fn context_window(&self) -> usize;
}

impl LlmBackend for Box<dyn LlmBackend> {
    fn complete(&mut self, messages: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, LlmError> {
        (**self).complete(messages, tools)
    }

    fn context_window(&self) -> usize {
        (**self).context_window()
    }
}

pub const DEFAULT_CONTEXT_WINDOW: usize = 8192;

/// Approximate token count: each run of alphanumeric characters is one
/// token and each other non-whitespace character is one token.
pub fn estimate_text_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

pub fn estimate_tokens(messages: &[ChatTurn]) -> usize {
    messages
        .iter()
        .map(|m| {
            estimate_text_tokens(&m.content)
                + m.tool_calls
                    .iter()
                    .map(|c| estimate_text_tokens(&c.name) + estimate_text_tokens(&c.arguments.to_string()))
                    .sum::<usize>()
        })
        .sum()
}

pub(crate) fn check_window(messages: &[ChatTurn], window: usize) -> Result<(), LlmError> {
    if messages.is_empty() {
        return Err(LlmError::EmptyMessages);
    }
    let needed = estimate_tokens(messages);
    if needed > window {
        return Err(LlmError::ContextWindowExceeded { needed, window });
    }
    Ok(())
}

/// Drops tool calls whose names were not offered.
pub(crate) fn filter_tool_calls(turn: &mut ChatTurn, tools: &[ToolSchema]) -> usize {
    let before = turn.tool_calls.len();
    turn.tool_calls.retain(|c| tools.iter().any(|t| t.name == c.name));
    let dropped = before - turn.tool_calls.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} tool call(s) outside the offered schemas");
    }
    dropped
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    Scripted { table: String, seed: u64 },
    Remote(RemoteSpec),
    Cassette { path: PathBuf, record: Option<RemoteSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default = "default_window")]
    pub context_window_tokens: usize,
}

fn default_window() -> usize {
    DEFAULT_CONTEXT_WINDOW
}

impl BackendSpec {
    pub fn sim(seed: u64) -> Self {
        BackendSpec {
            kind: BackendKind::Scripted { table: "sim".into(), seed },
            context_window_tokens: DEFAULT_CONTEXT_WINDOW,
        }
    }

    pub fn is_remote(&self) -> bool {
        !matches!(self.kind, BackendKind::Scripted { .. })
    }
}

pub fn build(spec: &BackendSpec) -> Result<Box<dyn LlmBackend>, LlmError> {
    let window = spec.context_window_tokens;
    Ok(match &spec.kind {
        BackendKind::Scripted { table, seed } => Box::new(ScriptedBackend::from_table(table, *seed, window)?),
        BackendKind::Remote(remote) => Box::new(RemoteBackend::new(remote.clone(), window)),
        BackendKind::Cassette { path, record } => {
            let inner = record.clone().map(|r| RemoteBackend::new(r, window));
            Box::new(CassetteBackend::open(path, inner, window)?)
        }
    })
}
