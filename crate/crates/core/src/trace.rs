//! Observations recorded by a runtime while it answers queries: every
//! backend prompt, every tool invocation seen at the process boundary, and
//! every consent decision. Attack predicates and reports read only this.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use std::time::Instant;

use crate::llm::{sim, ChatTurn, LlmBackend, LlmError, ToolSchema};
use crate::spoke::render_prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallCategory {
    Planning,
    Execution,
    Memory,
}

impl CallCategory {
    pub fn of_phase(phase: &str) -> Self {
        match phase {
            sim::HUB_PLANNER | sim::SPOKE_PLANNER => CallCategory::Planning,
            sim::SUMMARIZE | sim::EXTRACT_ENTITIES => CallCategory::Memory,
            _ => CallCategory::Execution,
        }
    }
}

/// Phase named by the marker line of a prompt's system turn.
pub fn phase_of_prompt(system: &str) -> String {
    system.lines().find_map(|l| l.strip_prefix("### ")).unwrap_or("unknown").trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub query: usize,
    pub principal: String,
    pub phase: String,
    pub text: String,
    #[serde(skip)]
    pub micros: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEventRecord {
    pub query: usize,
    pub app: String,
    pub tool: String,
    pub args: Value,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentKind {
    AppSelection,
    Collaboration,
    DataSharing,
    Irreversible,
    Egress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentVia {
    Prompt,
    Grant,
    SameApp,
    Unmediated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub query: usize,
    pub kind: ConsentKind,
    pub app: String,
    pub subject: String,
    pub detail: String,
    pub approved: bool,
    pub via: ConsentVia,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualData {
    pub query: usize,
    pub app: String,
    pub entity: String,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub query: usize,
    pub prompts: Vec<PromptRecord>,
    pub tool_events: Vec<ToolEventRecord>,
    pub consents: Vec<ConsentRecord>,
    pub manual_data: Vec<ManualData>,
}

impl Trace {
    pub fn prompt(&mut self, principal: &str, phase: &str, text: &str, micros: u64) {
        self.prompts.push(PromptRecord {
            query: self.query,
            principal: principal.to_string(),
            phase: phase.to_string(),
            text: text.to_string(),
            micros,
        });
    }

    pub fn tool(&mut self, app: &str, tool: &str, args: &Value, ok: bool) {
        self.tool_events.push(ToolEventRecord { query: self.query, app: app.into(), tool: tool.into(), args: args.clone(), ok });
    }

    pub fn consent(&mut self, kind: ConsentKind, app: &str, subject: &str, detail: &str, approved: bool, via: ConsentVia) {
        self.consents.push(ConsentRecord {
            query: self.query,
            kind,
            app: app.into(),
            subject: subject.into(),
            detail: detail.into(),
            approved,
            via,
        });
    }

    pub fn tools_for_query(&self, query: usize) -> Vec<String> {
        self.tool_events.iter().filter(|e| e.query == query).map(|e| e.tool.clone()).collect()
    }

    /// Backend calls per (principal class, category) for one query, where
    /// the principal class is `hub` or `spoke`.
    pub fn call_counts(&self, query: Option<usize>) -> Vec<(String, CallCategory, usize)> {
        let mut out: std::collections::BTreeMap<(String, CallCategory), usize> = Default::default();
        for p in self.prompts.iter().filter(|p| query.is_none_or(|q| p.query == q)) {
            *out.entry((principal_class(&p.principal).to_string(), CallCategory::of_phase(&p.phase))).or_default() += 1;
        }
        out.into_iter().map(|((p, c), n)| (p, c, n)).collect()
    }
}

pub fn principal_class(principal: &str) -> &str {
    match principal {
        "hub" => "hub",
        "shared" => "shared",
        _ => "spoke",
    }
}

/// Records every call made through `inner` as a prompt of `principal`.
pub struct Metered<'a> {
    pub inner: &'a mut dyn LlmBackend,
    pub trace: &'a mut Trace,
    pub principal: &'a str,
}

impl LlmBackend for Metered<'_> {
    fn complete(&mut self, messages: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, LlmError> {
        let started = Instant::now();
        let result = self.inner.complete(messages, tools);
        let phase = messages.first().map(|m| phase_of_prompt(&m.content)).unwrap_or_default();
        self.trace.prompt(self.principal, &phase, &render_prompt(messages, tools), started.elapsed().as_micros() as u64);
        result
    }

    fn context_window(&self) -> usize {
        self.inner.context_window()
    }
}
