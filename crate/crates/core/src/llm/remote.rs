//! OpenAI-compatible chat-completion client.
//!
//! Request: `POST {endpoint}` with `{"model", "messages", "tools"}` where each
//! tool is `{"type": "function", "function": {"name", "description",
//! "parameters"}}`. Response: `choices[0].message` with `content` and optional
//! `tool_calls[].function.{name, arguments}` (arguments as a JSON string).

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_window, ChatTurn, LlmBackend, LlmError, Role, ToolCall, ToolSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSpec {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

pub struct RemoteBackend {
    spec: RemoteSpec,
    agent: ureq::Agent,
    window: usize,
}

const RETRIES: u32 = 2;

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    }
}

/// Wire messages. Tool-call ids are synthesized from turn positions so tool
/// turns can reference the assistant call they answer.
pub(crate) fn wire_messages(messages: &[ChatTurn]) -> Vec<Value> {
    let mut out = Vec::new();
    let mut open_ids: Vec<String> = Vec::new();
    for (i, m) in messages.iter().enumerate() {
        let mut msg = json!({"role": role_name(m.role), "content": m.content});
        if !m.tool_calls.is_empty() {
            open_ids = (0..m.tool_calls.len()).map(|k| format!("call_{i}_{k}")).collect();
            msg["tool_calls"] = m
                .tool_calls
                .iter()
                .zip(&open_ids)
                .map(|(c, id)| {
                    json!({"id": id, "type": "function",
                        "function": {"name": c.name, "arguments": c.arguments.to_string()}})
                })
                .collect();
        }
        if m.role == Role::Tool {
            let id = if open_ids.is_empty() { format!("call_{i}") } else { open_ids.remove(0) };
            msg["tool_call_id"] = json!(id);
        }
        out.push(msg);
    }
    out
}

pub(crate) fn request_body(model: &str, messages: &[ChatTurn], tools: &[ToolSchema]) -> Value {
    let mut body = json!({"model": model, "messages": wire_messages(messages)});
    if !tools.is_empty() {
        body["tools"] = tools
            .iter()
            .map(|t| json!({"type": "function", "function": {"name": t.name, "description": t.description, "parameters": t.parameters}}))
            .collect();
    }
    body
}

pub(crate) fn parse_response(value: &Value) -> Result<ChatTurn, LlmError> {
    let message = value
        .pointer("/choices/0/message")
        .ok_or_else(|| LlmError::Remote("response has no choices[0].message".into()))?;
    let content = message.get("content").and_then(Value::as_str).unwrap_or("").to_string();
    let tool_calls = message
        .get("tool_calls")
        .and_then(Value::as_array)
        .map(|calls| {
            calls
                .iter()
                .filter_map(|c| {
                    let f = c.get("function")?;
                    let name = f.get("name")?.as_str()?.to_string();
                    let arguments = match f.get("arguments") {
                        Some(Value::String(s)) => serde_json::from_str(s).unwrap_or(Value::Null),
                        Some(v) => v.clone(),
                        None => Value::Null,
                    };
                    Some(ToolCall { name, arguments })
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(ChatTurn { role: Role::Assistant, content, tool_calls })
}

impl RemoteBackend {
    pub fn new(spec: RemoteSpec, window: usize) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(spec.timeout_secs)))
            .build();
        RemoteBackend { spec, agent: config.into(), window }
    }

    fn post(&self, body: &Value) -> Result<Value, LlmError> {
        let mut req = self.agent.post(&self.spec.endpoint);
        if let Some(var) = &self.spec.key_env {
            let key = std::env::var(var).map_err(|_| LlmError::Remote(format!("environment variable {var} is not set")))?;
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| LlmError::Remote(e.to_string()))?;
        resp.body_mut().read_json::<Value>().map_err(|e| LlmError::Remote(e.to_string()))
    }

    fn post_with_retry(&self, body: &Value) -> Result<Value, LlmError> {
        let mut attempt = 0;
        loop {
            match self.post(body) {
                Ok(v) => return Ok(v),
                Err(err) if attempt < RETRIES => {
                    attempt += 1;
                    log::warn!("remote backend attempt {attempt} failed: {err}");
                    thread::sleep(Duration::from_millis(200 << attempt));
                }
                Err(err) => return Err(err),
            }
        }
    }
}

impl LlmBackend for RemoteBackend {
    fn complete(&mut self, messages: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, LlmError> {
        check_window(messages, self.window)?;
        let body = request_body(&self.spec.model, messages, tools);
        let mut turn = parse_response(&self.post_with_retry(&body)?)?;
        if super::filter_tool_calls(&mut turn, tools) > 0 {
            let mut retry = messages.to_vec();
            retry.push(ChatTurn::user("Only call the tools that were provided."));
            let body = request_body(&self.spec.model, &retry, tools);
            turn = parse_response(&self.post_with_retry(&body)?)?;
            super::filter_tool_calls(&mut turn, tools);
        }
        Ok(turn)
    }

    fn context_window(&self) -> usize {
        self.window
    }
}
