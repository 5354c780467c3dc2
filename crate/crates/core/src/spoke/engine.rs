use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::{json, Map, Value};

use super::plan::{resolve_refs, ExecutionStep, SpokePlan};
use crate::apps::{string_args, AppManifest, World};
use crate::channel::{FailureKind, Pending, SpokeMode, SpokeOutcome};
use crate::isc::{validate_payload, FailureCode, FieldSpec, Payload, SpokeSid, ValidationRules};
use crate::llm::{sim, ChatTurn, LlmBackend, LlmError, ToolCall, ToolSchema};
use crate::memory::{MemoryStore, RecordRole, WorkingMemory};

/// Upper bound on tool-call rounds while composing the final answer.
const MAX_FINAL_ROUNDS: usize = 8;

/// Everything a spoke needs from outside its boundary. In a sandboxed spoke
/// each call is a request over the hub channel.
pub trait SpokeHost {
    fn probe(&mut self, functionality: &str) -> Result<Negotiated, FailureCode>;
    fn isc_request(&mut self, counterparty: &SpokeSid, functionality: &str, payload: Payload) -> Result<Payload, FailureCode>;
    fn user_data(&mut self, entity: &str) -> Option<String>;
    fn confirm(&mut self, tool: &str, preview: &str) -> bool;
    fn tool_event(&mut self, tool: &str, args: &Value, ok: bool);
    fn prompt(&mut self, phase: &str, text: &str, micros: u64);
    fn egress(&mut self, url: &str, body: &str) -> Result<String, String>;
    /// Completion on a backend the spoke cannot reach itself.
    fn remote_complete(&mut self, messages: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, LlmError>;
}

/// Result of a successful probe: the counterparty and its formats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negotiated {
    pub sid: SpokeSid,
    pub request_format: Vec<FieldSpec>,
    pub response_format: Vec<FieldSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct EngineFailure {
    pub kind: FailureKind,
    pub message: String,
}

fn failure(kind: FailureKind, message: impl Into<String>) -> EngineFailure {
    EngineFailure { kind, message: message.into() }
}

impl From<LlmError> for EngineFailure {
    fn from(e: LlmError) -> Self {
        let kind = match e {
            LlmError::ContextWindowExceeded { .. } => FailureKind::ContextWindowExceeded,
            _ => FailureKind::Backend,
        };
        failure(kind, e.to_string())
    }
}

pub enum BackendSlot {
    Local(Box<dyn LlmBackend>),
    ViaHost,
}

/// Spoke operator plus its planner/executor backend, memory and tools.
pub struct Engine {
    app: Option<AppManifest>,
    mode: SpokeMode,
    broadcast: Vec<String>,
    backend: BackendSlot,
    world: World,
    memory: MemoryStore,
    rules: ValidationRules,
    negotiated: BTreeMap<String, Negotiated>,
}

struct Run<'a, H: SpokeHost> {
    host: &'a mut H,
    messages: Vec<ChatTurn>,
    results: BTreeMap<usize, Map<String, Value>>,
    trace: Vec<String>,
}

impl Engine {
    pub fn new(
        app: Option<AppManifest>,
        mode: SpokeMode,
        broadcast: Vec<String>,
        backend: BackendSlot,
        memory: MemoryStore,
        rules: ValidationRules,
    ) -> Self {
        let broadcast = if app.is_some() { broadcast } else { Vec::new() };
        Engine { app, mode, broadcast, backend, world: World::builtin(), memory, rules, negotiated: BTreeMap::new() }
    }

    pub fn app_id(&self) -> &str {
        self.app.as_ref().map(|a| a.app_id.as_str()).unwrap_or("vanilla")
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    fn tool_names(&self) -> Vec<String> {
        self.app.iter().flat_map(|a| a.tools.iter().map(|t| t.name.clone())).collect()
    }

    fn tool_schemas(&self) -> Vec<ToolSchema> {
        let mut tools = self.app.as_ref().map(|a| a.tool_schemas()).unwrap_or_default();
        if !self.broadcast.is_empty() {
            tools.push(ToolSchema {
                name: sim::COLLABORATE_TOOL.into(),
                description: "Ask the hub for a functionality another app provides.".into(),
                parameters: json!({
                    "type": "object",
                    "properties": {"functionality": {"type": "string"}, "arguments": {"type": "object"}},
                    "required": ["functionality", "arguments"],
                }),
            });
        }
        tools
    }

    fn complete<H: SpokeHost>(
        &mut self,
        host: &mut H,
        phase: &str,
        messages: &[ChatTurn],
        tools: &[ToolSchema],
    ) -> Result<ChatTurn, EngineFailure> {
        let started = Instant::now();
        let result = match &mut self.backend {
            BackendSlot::Local(b) => b.complete(messages, tools),
            BackendSlot::ViaHost => host.remote_complete(messages, tools),
        };
        host.prompt(phase, &render_prompt(messages, tools), started.elapsed().as_micros() as u64);
        Ok(result?)
    }

    /// Context shared by the planner and executor prompts.
    fn context_block(&self, bootstrap: &[(String, String)], context: &WorkingMemory) -> String {
        let mut out = String::new();
        match &self.app {
            Some(app) => {
                out.push_str(&format!("App: {}\nDescription: {}\n", app.display_name, app.description));
            }
            None => out.push_str("App: none. Answer directly.\n"),
        }
        let f = if self.broadcast.is_empty() { "none".to_string() } else { self.broadcast.join(", ") };
        out.push_str(&format!("Functionalities: {f}\n"));
        let known = self.known_data(bootstrap);
        if !known.is_empty() {
            out.push_str("Known data:\n");
            for (k, v) in &known {
                out.push_str(&format!("- {k}: {v}\n"));
            }
        }
        let memory = context.render();
        if !memory.is_empty() {
            out.push_str("\nMemory:\n");
            out.push_str(&memory);
        }
        out
    }

    fn known_data(&self, bootstrap: &[(String, String)]) -> BTreeMap<String, String> {
        let mut known: BTreeMap<String, String> = BTreeMap::new();
        if self.mode != SpokeMode::Private {
            for p in self.memory.entities() {
                if p.attribution == self.app_id() {
                    known.insert(p.entity, p.value);
                }
            }
        }
        for (k, v) in bootstrap {
            known.insert(k.clone(), v.clone());
        }
        known
    }

    pub fn generate_plan<H: SpokeHost>(
        &mut self,
        host: &mut H,
        query: &str,
        bootstrap: &[(String, String)],
        context: &WorkingMemory,
    ) -> Result<SpokePlan, EngineFailure> {
        let system = format!(
            "{}\n{}\nWrite a JSON plan {{\"steps\": [...], \"data_needed\": [...], \"functionalities_needed\": [...]}}. \
             Step kinds: tool_call {{tool, args}}, isc_request {{functionality, args}} for listed functionalities only, \
             user_data_request {{entity}}, llm_transform {{instruction}}, and a closing final_answer. \
             Refer to earlier results as \"$<step>.<field>\".",
            sim::marker(sim::SPOKE_PLANNER),
            self.context_block(bootstrap, context)
        );
        let tools = self.tool_schemas();
        let mut messages = vec![ChatTurn::system(system), ChatTurn::user(query)];
        for attempt in 0..2 {
            let turn = self.complete(host, sim::SPOKE_PLANNER, &messages, &tools)?;
            if let Some(plan) = SpokePlan::parse(&turn.content) {
                let (plan, dropped) = plan.sanitize(&self.tool_names(), &self.broadcast);
                for d in dropped {
                    log::warn!("plan step dropped: {d}");
                }
                return Ok(plan);
            }
            if attempt == 0 {
                messages.push(turn);
                messages.push(ChatTurn::user(sim::FORMAT_REMINDER));
            }
        }
        Err(failure(FailureKind::PlanningFailure, "plan unparsable after one reprompt"))
    }

    pub fn handle_invocation<H: SpokeHost>(
        &mut self,
        host: &mut H,
        query: &str,
        bootstrap: &[(String, String)],
        context: &WorkingMemory,
    ) -> Result<SpokeOutcome, EngineFailure> {
        if query.trim().is_empty() {
            return Err(failure(FailureKind::EmptyQuery, "empty query"));
        }
        let plan = self.generate_plan(host, query, bootstrap, context)?;
        let system = format!(
            "{}\n{}\nCarry out the plan one step at a time. Call tools as instructed; at the final step, answer the user.",
            sim::marker(sim::SPOKE_STEP),
            self.context_block(bootstrap, context)
        );
        let plan_json = serde_json::to_string(&plan).expect("plan serializes");
        let mut run = Run {
            host,
            messages: vec![ChatTurn::system(system), ChatTurn::user(query), ChatTurn::assistant(plan_json)],
            results: BTreeMap::new(),
            trace: Vec::new(),
        };
        let known = self.known_data(bootstrap);
        let mut response = None;
        for (i, step) in plan.steps.iter().enumerate() {
            let n = i + 1;
            match self.execute_step(&mut run, n, step, &known)? {
                StepEnd::Continue => {}
                StepEnd::Stop(text) => {
                    response = Some(text);
                    break;
                }
            }
        }
        let response = response.unwrap_or_default();
        let app = self.app_id().to_string();
        let private = self.mode == SpokeMode::Private;
        let _ = self.memory.append(RecordRole::User, query, &app, private);
        let _ = self.memory.append(RecordRole::Spoke(app.clone()), &response, &app, private);
        Ok(SpokeOutcome { response, tool_trace: run.trace, pending: Pending::None })
    }

    fn execute_step<H: SpokeHost>(
        &mut self,
        run: &mut Run<'_, H>,
        n: usize,
        step: &ExecutionStep,
        known: &BTreeMap<String, String>,
    ) -> Result<StepEnd, EngineFailure> {
        let resolved = match step {
            ExecutionStep::ToolCall { tool, args } => {
                ExecutionStep::ToolCall { tool: tool.clone(), args: resolve_refs(args, &run.results) }
            }
            ExecutionStep::IscRequest { functionality, args } => {
                ExecutionStep::IscRequest { functionality: functionality.clone(), args: resolve_refs(args, &run.results) }
            }
            other => other.clone(),
        };
        let step_json = serde_json::to_string(&resolved).expect("step serializes");
        match resolved {
            ExecutionStep::ToolCall { tool, args } => {
                run.messages.push(ChatTurn::user(format!("Step {n}: {step_json}")));
                let tools = self.tool_schemas();
                let mut calls = Vec::new();
                for _ in 0..2 {
                    let turn = self.complete(run.host, sim::SPOKE_STEP, &run.messages, &tools)?;
                    if !turn.tool_calls.is_empty() {
                        calls = turn.tool_calls.clone();
                        run.messages.push(turn);
                        break;
                    }
                }
                if calls.is_empty() {
                    // The model answered in prose; fall back to the planned call.
                    calls = vec![ToolCall { name: tool, arguments: args }];
                    run.messages.push(ChatTurn::assistant_calls(calls.clone()));
                }
                let mut last = Ok(Map::new());
                for call in calls {
                    last = self.execute_call(run, n, &call);
                }
                if let Err(e) = last {
                    return Ok(StepEnd::Stop(format!("I could not complete the request: step {n} failed ({e}).")));
                }
            }
            ExecutionStep::IscRequest { functionality, args } => {
                let result = self.collaborate(run, &functionality, &args);
                self.push_result(run, n, &functionality, &args, result);
            }
            ExecutionStep::UserDataRequest { entity } => {
                let value = match known.get(&entity) {
                    Some(v) => Some(v.clone()),
                    None => run.host.user_data(&entity),
                };
                let Some(value) = value else {
                    return Ok(StepEnd::Stop(format!("I cannot continue without your {}.", entity.replace('_', " "))));
                };
                let app = self.app_id().to_string();
                let _ = self.memory.upsert_entity(&entity, &value, &app);
                let args = json!({ "entity": entity });
                let mut result = Map::new();
                result.insert(entity.clone(), Value::String(value));
                self.push_result(run, n, "user_data", &args, Ok(result));
            }
            ExecutionStep::LlmTransform { .. } => {
                run.messages.push(ChatTurn::user(format!("Step {n}: {step_json}")));
                let turn = self.complete(run.host, sim::SPOKE_STEP, &run.messages, &[])?;
                let mut result = Map::new();
                result.insert("text".into(), Value::String(turn.content.clone()));
                run.messages.push(turn);
                run.results.insert(n, result);
            }
            ExecutionStep::FinalAnswer => {
                run.messages.push(ChatTurn::user(format!("Step {n}: {step_json}")));
                let tools = self.tool_schemas();
                let mut text = String::new();
                for round in 0..MAX_FINAL_ROUNDS {
                    let turn = self.complete(run.host, sim::SPOKE_STEP, &run.messages, &tools)?;
                    if turn.tool_calls.is_empty() {
                        text = turn.content;
                        break;
                    }
                    let calls = turn.tool_calls.clone();
                    run.messages.push(turn);
                    for call in &calls {
                        let _ = self.execute_call(run, n, call);
                    }
                    if round + 1 == MAX_FINAL_ROUNDS {
                        text = "I stopped after too many tool rounds.".into();
                    }
                }
                return Ok(StepEnd::Stop(text));
            }
        }
        Ok(StepEnd::Continue)
    }

    fn push_result<H: SpokeHost>(
        &mut self,
        run: &mut Run<'_, H>,
        n: usize,
        name: &str,
        args: &Value,
        result: Result<Map<String, Value>, String>,
    ) {
        let content = match &result {
            Ok(r) => json!({ "step": n, "name": name, "args": args, "result": r }),
            Err(e) => json!({ "step": n, "name": name, "args": args, "error": e }),
        };
        run.messages.push(ChatTurn::tool(content.to_string()));
        if let Ok(r) = result {
            run.results.insert(n, r);
        }
    }

    /// Runs one backend-issued call and records its tool turn.
    fn execute_call<H: SpokeHost>(
        &mut self,
        run: &mut Run<'_, H>,
        n: usize,
        call: &ToolCall,
    ) -> Result<Map<String, Value>, String> {
        if call.name == sim::COLLABORATE_TOOL {
            let functionality = call.arguments["functionality"].as_str().unwrap_or("").to_string();
            let args = call.arguments.get("arguments").cloned().unwrap_or(json!({}));
            let result = self.collaborate(run, &functionality, &args);
            self.push_result(run, n, &functionality, &args, result.clone());
            return result;
        }
        let args = Value::Object(string_args(&call.arguments));
        let result = self.run_tool(run, &call.name, &args);
        self.push_result(run, n, &call.name, &args, result.clone());
        result
    }

    /// Executes an own tool, with per-instance consent for irreversible ones
    /// and a single retry on failure.
    fn run_tool<H: SpokeHost>(&mut self, run: &mut Run<'_, H>, tool: &str, args: &Value) -> Result<Map<String, Value>, String> {
        let executed = |r: &Result<Map<String, Value>, String>| match r {
            Err(e) => e != DECLINED && !e.starts_with(NOT_A_TOOL),
            Ok(_) => true,
        };
        let mut result = self.invoke_tool(run.host, tool, args);
        if executed(&result) {
            run.trace.push(tool.to_string());
            if result.is_err() {
                result = self.invoke_tool(run.host, tool, args);
                if executed(&result) {
                    run.trace.push(tool.to_string());
                }
            }
        }
        result
    }

    fn invoke_tool<H: SpokeHost>(&mut self, host: &mut H, tool: &str, args: &Value) -> Result<Map<String, Value>, String> {
        let Some(spec) = self.app.as_ref().and_then(|a| a.tool(tool)).cloned() else {
            return Err(format!("{NOT_A_TOOL} {tool}"));
        };
        let irreversible = self.app.as_ref().is_some_and(|a| a.is_irreversible(tool));
        if irreversible {
            let preview = format!("{tool} {}", serde_json::to_string_pretty(args).expect("args serialize"));
            if !host.confirm(tool, &preview) {
                return Err(DECLINED.into());
            }
        }
        let map = args.as_object().cloned().unwrap_or_default();
        let result = match (&spec.handler, &spec.endpoint) {
            (Some(handler), _) => self.world.call(handler, &map),
            (None, Some(url)) => host
                .egress(url, &Value::Object(map).to_string())
                .and_then(|body| serde_json::from_str::<Map<String, Value>>(&body).map_err(|e| e.to_string())),
            (None, None) => Err(format!("{tool} has no binding")),
        };
        host.tool_event(tool, args, result.is_ok());
        result
    }

    /// Probe, format and send a collaboration request; returns the validated
    /// response fields.
    fn collaborate<H: SpokeHost>(&mut self, run: &mut Run<'_, H>, functionality: &str, args: &Value) -> Result<Map<String, Value>, String> {
        if !self.broadcast.iter().any(|f| f == functionality) {
            return Err(format!("unknown functionality {functionality}"));
        }
        let negotiated = match self.negotiated.get(functionality) {
            Some(n) => n.clone(),
            None => {
                let n = run.host.probe(functionality).map_err(|c| format!("collaboration refused ({c:?})"))?;
                self.negotiated.insert(functionality.to_string(), n.clone());
                n
            }
        };
        let payload = self.format_request(run.host, &negotiated.request_format, args).map_err(|e| e.message)?;
        validate_payload(&payload, &negotiated.request_format, &self.rules).map_err(|m| format!("request malformed ({m})"))?;
        let response = run
            .host
            .isc_request(&negotiated.sid, functionality, payload)
            .map_err(|c| format!("collaboration failed ({c:?})"))?;
        validate_payload(&response, &negotiated.response_format, &self.rules).map_err(|m| format!("response malformed ({m})"))?;
        Ok(response.0.into_iter().map(|(k, v)| (k, Value::String(v))).collect())
    }

    fn format_request<H: SpokeHost>(&mut self, host: &mut H, format: &[FieldSpec], args: &Value) -> Result<Payload, EngineFailure> {
        let pairs: Vec<[&str; 2]> = format.iter().map(|f| [f.name.as_str(), f.ty.as_str()]).collect();
        let system = format!(
            "{}\nRequest format: {}\nFill every field of the request format, in order, from the arguments. Reply with a JSON array of [field, value] pairs.",
            sim::marker(sim::ISC_FORMAT_REQUEST),
            serde_json::to_string(&pairs).expect("pairs serialize")
        );
        let mut messages = vec![ChatTurn::system(system), ChatTurn::user(args.to_string())];
        for attempt in 0..2 {
            let turn = self.complete(host, sim::ISC_FORMAT_REQUEST, &messages, &[])?;
            if let Some(p) = Payload::from_json(turn.content.trim()) {
                return Ok(p);
            }
            if attempt == 0 {
                messages.push(turn);
                messages.push(ChatTurn::user(sim::FORMAT_REMINDER));
            }
        }
        Err(failure(FailureKind::PlanningFailure, "request payload unparsable"))
    }

    /// Vanilla-spoke comparison of several app responses.
    pub fn synthesize<H: SpokeHost>(&mut self, host: &mut H, query: &str, responses: &[String]) -> Result<String, EngineFailure> {
        let system = format!(
            "{}\nCompare the responses below and answer the query. Use only what the responses state.",
            sim::marker(sim::SYNTHESIZE)
        );
        let mut input = format!("Query: {query}");
        for (i, r) in responses.iter().enumerate() {
            input.push_str(&format!("\nResponse {}: {}", i + 1, r.replace('\n', " ")));
        }
        let turn = self.complete(host, sim::SYNTHESIZE, &[ChatTurn::system(system), ChatTurn::user(input)], &[])?;
        Ok(turn.content)
    }

    /// Provider side of a collaboration: rule-based, no backend involved.
    pub fn serve<H: SpokeHost>(&mut self, host: &mut H, functionality: &str, payload: &Payload) -> Result<Payload, FailureCode> {
        let app = self.app.as_ref().ok_or(FailureCode::NoProvider)?;
        let offer = app.offer(functionality).ok_or(FailureCode::NoProvider)?.clone();
        let descriptor = offer.descriptor().map_err(|_| FailureCode::ProviderFailed)?;
        validate_payload(payload, &descriptor.request_fields, &self.rules).map_err(|_| FailureCode::Malformed)?;
        let args: Map<String, Value> = payload.0.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        let result = self.invoke_tool(host, &offer.tool, &Value::Object(args)).map_err(|_| FailureCode::ProviderFailed)?;
        let mut response = Payload::new();
        for f in &descriptor.response_fields {
            let v = result.get(&f.name).and_then(Value::as_str).ok_or(FailureCode::ProviderFailed)?;
            response = response.with(&f.name, v);
        }
        validate_payload(&response, &descriptor.response_fields, &self.rules).map_err(|_| FailureCode::ProviderFailed)?;
        Ok(response)
    }
}

const DECLINED: &str = "declined by user";
const NOT_A_TOOL: &str = "not a tool of this app:";

enum StepEnd {
    Continue,
    Stop(String),
}

/// Flat text of a backend call, as logged for prompt audits.
pub fn render_prompt(messages: &[ChatTurn], tools: &[ToolSchema]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str(&format!("[{:?}] {}\n", m.role, m.content));
        for c in &m.tool_calls {
            out.push_str(&format!("[call] {} {}\n", c.name, c.arguments));
        }
    }
    for t in tools {
        out.push_str(&format!("[tool] {}: {}\n", t.name, t.description));
    }
    out
}
