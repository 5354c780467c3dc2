//! The non-isolated baseline: every installed app's description and tools
//! share one backend context, one memory and one tool world, with no
//! mediation, consent or confirmation.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::apps::{AppManifest, Registry};
use crate::channel::SpokeMode;
use crate::config::HubConfig;
use crate::hub::{EgressTransport, HttpTransport, User, UserDataRequest};
use crate::isc::{FailureCode, Payload, SpokeSid};
use crate::llm::{self, ChatTurn, LlmBackend, LlmError, ToolSchema};
use crate::memory::{MemoryError, MemoryStore, RecordRole, Scope};
use crate::spoke::{BackendSlot, Engine, Negotiated, SpokeHost};
use crate::trace::{ConsentKind, ConsentVia, ManualData, Metered, Trace};

pub const SHARED: &str = "shared";

/// One manifest carrying every app's description and tools.
pub fn merged_manifest(apps: &[&AppManifest]) -> Option<AppManifest> {
    if apps.is_empty() {
        return None;
    }
    let mut merged = AppManifest {
        app_id: SHARED.into(),
        display_name: "Assistant".into(),
        description: apps.iter().map(|a| a.description.as_str()).collect::<Vec<_>>().join(" "),
        root_domain: "assistant.example".into(),
        irreversible_actions: Vec::new(),
        data_needs: Vec::new(),
        tools: Vec::new(),
        functionalities_offered: Vec::new(),
        backend_override: None,
    };
    for app in apps {
        merged.irreversible_actions.extend(app.irreversible_actions.iter().cloned());
        merged.data_needs.extend(app.data_needs.iter().cloned());
        merged.tools.extend(app.tools.iter().cloned());
    }
    Some(merged)
}

struct SharedHost {
    trace: Trace,
    user: Box<dyn User>,
    owners: BTreeMap<String, String>,
    transport: HttpTransport,
}

impl SharedHost {
    fn owner(&self, tool: &str) -> String {
        self.owners.get(tool).cloned().unwrap_or_else(|| SHARED.into())
    }
}

impl SpokeHost for SharedHost {
    fn probe(&mut self, _: &str) -> Result<Negotiated, FailureCode> {
        Err(FailureCode::NoProvider)
    }

    fn isc_request(&mut self, _: &SpokeSid, _: &str, _: Payload) -> Result<Payload, FailureCode> {
        Err(FailureCode::NoProvider)
    }

    fn user_data(&mut self, entity: &str) -> Option<String> {
        let value = self.user.provide_data(&UserDataRequest { app: SHARED.into(), entity: entity.into() })?;
        let query = self.trace.query;
        self.trace.manual_data.push(ManualData { query, app: SHARED.into(), entity: entity.into(), value: value.clone() });
        Some(value)
    }

    fn confirm(&mut self, tool: &str, preview: &str) -> bool {
        let app = self.owner(tool);
        self.trace.consent(ConsentKind::Irreversible, &app, tool, preview, true, ConsentVia::Unmediated);
        true
    }

    fn tool_event(&mut self, tool: &str, args: &Value, ok: bool) {
        let app = self.owner(tool);
        self.trace.tool(&app, tool, args, ok);
    }

    fn prompt(&mut self, phase: &str, text: &str, micros: u64) {
        self.trace.prompt(SHARED, phase, text, micros);
    }

    fn egress(&mut self, url: &str, body: &str) -> Result<String, String> {
        self.transport.post(url, body)
    }

    fn remote_complete(&mut self, _: &[ChatTurn], _: &[ToolSchema]) -> Result<ChatTurn, LlmError> {
        Err(LlmError::Remote("the shared runtime calls its backend directly".into()))
    }
}

pub struct SharedRuntime {
    engine: Engine,
    host: SharedHost,
    memory: MemoryStore,
    backend: Box<dyn LlmBackend>,
    config: HubConfig,
    queries: usize,
    appends_since_summary: u64,
}

impl SharedRuntime {
    pub fn new(config: HubConfig, user: Box<dyn User>) -> Result<Self, String> {
        let mut registry = Registry::builtin();
        registry.install_all(&config.installed.iter().map(String::as_str).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
        let installed = registry.installed();
        let owners = installed.iter().flat_map(|a| a.tools.iter().map(|t| (t.name.clone(), a.app_id.clone()))).collect();
        let slot = BackendSlot::Local(llm::build(&config.backend).map_err(|e| e.to_string())?);
        let engine =
            Engine::new(merged_manifest(&installed), SpokeMode::Standard, Vec::new(), slot, MemoryStore::in_memory(), config.rules());
        Ok(SharedRuntime {
            engine,
            host: SharedHost { trace: Trace::default(), user, owners, transport: HttpTransport::default() },
            memory: MemoryStore::in_memory(),
            backend: llm::build(&config.backend).map_err(|e| e.to_string())?,
            config,
            queries: 0,
            appends_since_summary: 0,
        })
    }

    pub fn trace(&self) -> &Trace {
        &self.host.trace
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    /// Answers `query` with every stored entity and the global working
    /// memory in context.
    pub fn handle_query(&mut self, query: &str) -> Result<String, String> {
        self.host.trace.query = self.queries;
        self.queries += 1;
        let bootstrap: Vec<(String, String)> = self.memory.entities().into_iter().map(|p| (p.entity, p.value)).collect();
        let context =
            self.memory.build_working_memory(&Scope::Global, self.config.recent_window, false, self.config.working_memory_budget);
        let outcome = self.engine.handle_invocation(&mut self.host, query, &bootstrap, &context).map_err(|f| f.to_string())?;
        self.remember(query, &outcome.response).map_err(|e| e.to_string())?;
        Ok(outcome.response)
    }

    fn remember(&mut self, query: &str, response: &str) -> Result<(), MemoryError> {
        let seq = self.memory.append(RecordRole::User, query, SHARED, false)?;
        self.memory.append(RecordRole::Spoke(SHARED.into()), response, SHARED, false)?;
        self.appends_since_summary += 2;
        let records: Vec<_> = self.memory.records().into_iter().filter(|r| r.seq == seq).collect();
        let mut metered = Metered { inner: &mut *self.backend, trace: &mut self.host.trace, principal: SHARED };
        self.memory.extract_entities(&records, SHARED, &mut metered)?;
        if self.appends_since_summary >= self.config.summary_every {
            self.appends_since_summary = 0;
            let mut metered = Metered { inner: &mut *self.backend, trace: &mut self.host.trace, principal: SHARED };
            self.memory.summarize(&Scope::Global, &mut metered)?;
        }
        Ok(())
    }
}
