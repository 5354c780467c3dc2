//! The trusted mediator. Every user query enters here; the hub plans which
//! apps resolve it, runs each app in its own sandboxed spoke, supplies data
//! only with consent, and relays collaboration between spokes.

mod plan;
mod user;

use std::collections::BTreeMap;
use std::os::unix::net::UnixStream;
use std::os::unix::process::ExitStatusExt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use plan::{assess_collaboration, CollabAssessment, Dispatch, HubPlan, Task, Verdict};
pub use user::{AppChoiceRequest, ConsentItem, DataConsentRequest, ScriptedUser, UiEvent, UiEventKind, User, UserDataRequest};

use crate::apps::{AppManifest, Registry, RegistryError};
use crate::audit::AuditLog;
use crate::channel::{read_frame, write_frame, ChannelError, Control, FailureKind, Frame, SpokeMode};
use crate::config::{default_spoke_bin, HubConfig};
use crate::isc::{validate_message, FailureCode, IscEnvelope, Payload, SpokeSid};
use crate::llm::{self, sim, ChatTurn, LlmBackend, LlmError, ToolSchema};
use crate::memory::{MemoryError, MemoryStore, RecordRole, Scope, SYSTEM};
use crate::permission::{
    CheckResult, GrantDuration, PermissionError, PermissionManager, PermissionScope, PromptOption, PromptRequest,
};
use crate::sandbox::{self, host_of, EgressDecision, EgressGuard, Isolation, LaunchedProcess};
use crate::trace::{ConsentKind, ConsentVia, ManualData, Metered, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HubState {
    Idle,
    Planning,
    AppSelection,
    DataConsent,
    SpokeRunning,
    IscMediation,
    Responding,
}

#[derive(Debug, thiserror::Error)]
pub enum HubError {
    #[error("planner output unparsable after one reprompt")]
    PlanningFailure,
    #[error("{0}")]
    UserDeclined(String),
    #[error("spoke for {app} did not answer in time")]
    SpokeTimeout { app: String },
    #[error("spoke for {app} terminated: {status}")]
    SpokeCrashed { app: String, status: String },
    #[error("spoke for {app} could not be launched confined: {reason}")]
    LaunchFailure { app: String, reason: String },
    #[error("spoke for {app} failed ({kind:?}): {message}")]
    SpokeFailed { app: String, kind: FailureKind, message: String },
    #[error("unknown app {0}")]
    UnknownApp(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Permission(#[from] PermissionError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalResponse {
    pub text: String,
    pub plan: HubPlan,
    /// Apps whose spokes answered, in invocation order.
    pub apps: Vec<String>,
    /// A required permission was denied and `text` explains the refusal.
    pub declined: bool,
}

/// Performs network requests the egress guard has allowed.
pub trait EgressTransport: Send {
    fn post(&mut self, url: &str, body: &str) -> Result<String, String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(30))).build();
        HttpTransport { agent: config.into() }
    }
}

impl EgressTransport for HttpTransport {
    fn post(&mut self, url: &str, body: &str) -> Result<String, String> {
        let mut resp = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

pub struct SpokeHandle {
    pub app_id: String,
    pub sid: SpokeSid,
    pub mode: SpokeMode,
    pub isolation: Isolation,
    process: LaunchedProcess,
}

impl SpokeHandle {
    pub fn pid(&self) -> u32 {
        self.process.child.id()
    }

    pub fn scratch_dir(&self) -> &std::path::Path {
        &self.process.scratch_dir
    }
}

#[derive(Clone, Copy)]
enum Await {
    Outcome,
    IscReply,
}

const VANILLA_KEY: &str = "#vanilla";
const VANILLA: &str = "vanilla";

fn private_key(app: &str) -> String {
    format!("#private/{app}")
}

fn preview(payload: &Payload) -> String {
    payload.0.iter().map(|(k, v)| format!("{k} = {v}")).collect::<Vec<_>>().join("\n")
}

pub struct Hub {
    config: HubConfig,
    registry: Registry,
    permissions: Arc<Mutex<PermissionManager>>,
    memory: MemoryStore,
    planner: Box<dyn LlmBackend>,
    user: Box<dyn User>,
    spokes: BTreeMap<String, SpokeHandle>,
    spoke_backends: BTreeMap<String, Box<dyn LlmBackend>>,
    probes: BTreeMap<(String, String), String>,
    approved_values: BTreeMap<String, String>,
    session: Option<String>,
    sessions_started: u64,
    queries: usize,
    appends_since_summary: u64,
    audit: AuditLog,
    rng: ChaCha20Rng,
    state: HubState,
    plan: HubPlan,
    trace: Trace,
    egress: EgressGuard,
    transport: Box<dyn EgressTransport>,
    spoke_bin: PathBuf,
    data_dir: PathBuf,
    _scratch: Option<tempfile::TempDir>,
    ui_seq: u64,
}

impl Hub {
    /// A hub over the built-in app store with `config.installed` installed.
    pub fn new(config: HubConfig, user: Box<dyn User>) -> Result<Self, HubError> {
        Self::with_registry(config, Registry::builtin(), user)
    }

    pub fn with_registry(config: HubConfig, mut registry: Registry, user: Box<dyn User>) -> Result<Self, HubError> {
        for app in &config.installed {
            registry.install(app)?;
        }
        let (data_dir, scratch) = match &config.data_dir {
            Some(d) => (d.clone(), None),
            None => {
                let t = tempfile::tempdir().map_err(|e| HubError::Setup(e.to_string()))?;
                (t.path().to_path_buf(), Some(t))
            }
        };
        let hub_dir = data_dir.join("hub");
        std::fs::create_dir_all(&hub_dir).map_err(|e| HubError::Setup(e.to_string()))?;
        let memory = MemoryStore::open(&hub_dir.join("memory.kv"))?;
        let permissions = PermissionManager::open(hub_dir.join("grants.json"))?;
        let audit = AuditLog::to_file(&hub_dir.join("audit.jsonl")).map_err(|e| HubError::Setup(e.to_string()))?;
        let spoke_bin = config
            .spoke_bin
            .clone()
            .or_else(default_spoke_bin)
            .ok_or_else(|| HubError::Setup("spoke executable not found".into()))?;
        let planner = llm::build(&config.backend)?;
        let rng = ChaCha20Rng::seed_from_u64(config.seed);
        Ok(Hub {
            config,
            registry,
            permissions: Arc::new(Mutex::new(permissions)),
            memory,
            planner,
            user,
            spokes: BTreeMap::new(),
            spoke_backends: BTreeMap::new(),
            probes: BTreeMap::new(),
            approved_values: BTreeMap::new(),
            session: None,
            sessions_started: 0,
            queries: 0,
            appends_since_summary: 0,
            audit,
            rng,
            state: HubState::Idle,
            plan: HubPlan::default(),
            trace: Trace::default(),
            egress: EgressGuard::default(),
            transport: Box::new(HttpTransport::default()),
            spoke_bin,
            data_dir,
            _scratch: scratch,
            ui_seq: 0,
        })
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn install(&mut self, app_id: &str) -> Result<(), HubError> {
        self.registry.install(app_id)?;
        self.audit.record("install", json!({"app": app_id}));
        Ok(())
    }

    /// Adds a manifest to the store and installs it.
    pub fn add_app(&mut self, manifest: AppManifest) -> Result<(), HubError> {
        let id = manifest.app_id.clone();
        self.registry.add_to_store(manifest)?;
        self.install(&id)
    }

    /// Uninstalling stops the app's spoke.
    pub fn uninstall(&mut self, app_id: &str) -> bool {
        self.shutdown_spoke(app_id);
        self.shutdown_spoke(&private_key(app_id));
        let removed = self.registry.uninstall(app_id);
        if removed {
            self.audit.record("uninstall", json!({"app": app_id}));
        }
        removed
    }

    pub fn permissions(&self) -> Arc<Mutex<PermissionManager>> {
        Arc::clone(&self.permissions)
    }

    fn perms(&self) -> MutexGuard<'_, PermissionManager> {
        self.permissions.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn state(&self) -> HubState {
        self.state
    }

    pub fn current_plan(&self) -> &HubPlan {
        &self.plan
    }

    pub fn data_dir(&self) -> &std::path::Path {
        &self.data_dir
    }

    pub fn egress_log(&self) -> &[sandbox::EgressRecord] {
        self.egress.log()
    }

    pub fn set_transport(&mut self, transport: Box<dyn EgressTransport>) {
        self.transport = transport;
    }

    pub fn set_user(&mut self, user: Box<dyn User>) -> Box<dyn User> {
        std::mem::replace(&mut self.user, user)
    }

    /// Live spoke for `app` in standard mode.
    pub fn spoke(&self, app: &str) -> Option<&SpokeHandle> {
        self.spokes.get(app)
    }

    pub fn spokes(&self) -> impl Iterator<Item = &SpokeHandle> {
        self.spokes.values()
    }

    /// Channel edges of the running system. Every edge has the hub at one end.
    pub fn channel_topology(&self) -> Vec<(String, String)> {
        self.spokes.values().map(|h| ("hub".to_string(), h.sid.as_str().to_string())).collect()
    }

    fn transition(&mut self, to: HubState) {
        if self.state != to {
            self.audit.record("transition", json!({"from": self.state, "to": to}));
            self.state = to;
        }
    }

    fn notify(&mut self, kind: UiEventKind, payload: Value) {
        self.ui_seq += 1;
        let event = UiEvent { seq: self.ui_seq, kind, correlation_id: None, payload };
        self.user.notify(event);
    }

    // ------------------------------------------------------------ sessions

    pub fn session_id(&self) -> Option<&str> {
        self.session.as_deref()
    }

    pub fn begin_session(&mut self) -> String {
        if let Some(s) = &self.session {
            return s.clone();
        }
        self.sessions_started += 1;
        let id = format!("session-{}", self.sessions_started);
        self.rng = ChaCha20Rng::seed_from_u64(self.config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(self.sessions_started));
        self.perms().begin_session(&id);
        self.audit.record("session_begin", json!({"session": id}));
        self.session = Some(id.clone());
        id
    }

    /// Stops every spoke and clears session grants.
    pub fn end_session(&mut self) {
        let Some(id) = self.session.take() else { return };
        let keys: Vec<String> = self.spokes.keys().cloned().collect();
        for k in keys {
            self.shutdown_spoke(&k);
        }
        self.probes.clear();
        self.spoke_backends.clear();
        self.perms().end_session();
        self.audit.record("session_end", json!({"session": id}));
        self.transition(HubState::Idle);
    }

    fn shutdown_spoke(&mut self, key: &str) {
        let Some(mut h) = self.spokes.remove(key) else { return };
        let _ = write_frame(&mut h.process.channel, &Frame::Control(Control::Shutdown));
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match h.process.child.try_wait() {
                Ok(Some(_)) => break,
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                _ => {
                    let _ = h.process.child.kill();
                    let _ = h.process.child.wait();
                    break;
                }
            }
        }
        self.probes.retain(|(req, _), prov| req != key && prov != key);
        self.audit.record("spoke_stop", json!({"app": h.app_id, "sid": h.sid.as_str()}));
    }

    // ------------------------------------------------------------ queries

    pub fn handle_user_query(&mut self, query: &str) -> Result<FinalResponse, HubError> {
        self.run_query(query, false)
    }

    /// Like [`Hub::handle_user_query`], but the app runs without any prior
    /// context and its interactions stay out of future context.
    pub fn handle_private_query(&mut self, query: &str) -> Result<FinalResponse, HubError> {
        self.run_query(query, true)
    }

    fn run_query(&mut self, query: &str, private: bool) -> Result<FinalResponse, HubError> {
        self.begin_session();
        self.trace.query = self.queries;
        self.queries += 1;
        self.audit.record("query", json!({"index": self.trace.query, "private": private}));
        self.transition(HubState::Planning);
        let plan = match self.plan_query(query, private) {
            Ok(p) => p,
            Err(e) => {
                self.transition(HubState::Idle);
                return Err(e);
            }
        };
        self.plan = plan.clone();
        let (text, apps, declined) = match self.dispatch(query, &plan, private) {
            Ok((text, apps)) => (text, apps, false),
            Err(HubError::UserDeclined(msg)) => (msg, Vec::new(), true),
            Err(e) => {
                self.audit.record("query_failed", json!({"error": e.to_string()}));
                self.transition(HubState::Idle);
                return Err(e);
            }
        };
        self.transition(HubState::Responding);
        let attribution = apps.first().cloned().unwrap_or_else(|| SYSTEM.to_string());
        if let Err(e) = self.remember(query, &text, &attribution, private) {
            log::warn!("memory update failed: {e}");
        }
        self.notify(UiEventKind::AssistantMessage, json!({"text": text, "declined": declined}));
        self.transition(HubState::Idle);
        Ok(FinalResponse { text, plan, apps, declined })
    }

    fn dispatch(&mut self, query: &str, plan: &HubPlan, private: bool) -> Result<(String, Vec<String>), HubError> {
        if !plan.needs_app {
            return Ok((self.run_vanilla(query)?, Vec::new()));
        }
        match plan.dispatch {
            Dispatch::Choose => {
                let app = self.resolve_app_selection(query, &plan.primary_apps)?;
                let text = self.run_app(&app, query, private)?;
                Ok((text, vec![app]))
            }
            Dispatch::Compare => {
                let mut responses = Vec::new();
                for app in &plan.primary_apps {
                    responses.push(self.run_app(app, query, private)?);
                }
                let text = self.synthesize(query, &responses)?;
                Ok((text, plan.primary_apps.clone()))
            }
            Dispatch::Sequence => {
                let mut text = String::new();
                let mut apps: Vec<String> = Vec::new();
                for task in &plan.tasks {
                    text.push_str(&self.run_app(&task.app, &task.query, private)?);
                    if !apps.contains(&task.app) {
                        apps.push(task.app.clone());
                    }
                }
                Ok((text, apps))
            }
        }
    }

    fn remember(&mut self, query: &str, response: &str, attribution: &str, private: bool) -> Result<(), MemoryError> {
        let seq = self.memory.append(RecordRole::User, query, attribution, private)?;
        let role = if attribution == SYSTEM { RecordRole::Hub } else { RecordRole::Spoke(attribution.to_string()) };
        self.memory.append(role, response, attribution, private)?;
        self.appends_since_summary += 2;
        if !private {
            let records: Vec<_> = self.memory.records().into_iter().filter(|r| r.seq == seq).collect();
            let mut backend = Metered { inner: &mut *self.planner, trace: &mut self.trace, principal: "hub" };
            self.memory.extract_entities(&records, attribution, &mut backend)?;
        }
        if self.appends_since_summary >= self.config.summary_every {
            self.appends_since_summary = 0;
            let mut scopes = vec![Scope::Global];
            scopes.extend(self.registry.installed().iter().map(|a| Scope::Spoke(a.app_id.clone())));
            for scope in scopes {
                if self.memory.records_in(&scope).is_empty() {
                    continue;
                }
                let mut backend = Metered { inner: &mut *self.planner, trace: &mut self.trace, principal: "hub" };
                self.memory.summarize(&scope, &mut backend)?;
            }
        }
        Ok(())
    }

    fn hub_complete(&mut self, messages: &[ChatTurn]) -> Result<ChatTurn, LlmError> {
        Metered { inner: &mut *self.planner, trace: &mut self.trace, principal: "hub" }.complete(messages, &[])
    }

    /// Asks the hub backend which installed apps resolve `query`.
    pub fn plan_query(&mut self, query: &str, private: bool) -> Result<HubPlan, HubError> {
        let installed: Vec<(String, String)> =
            self.registry.installed().iter().map(|a| (a.app_id.clone(), a.description.clone())).collect();
        let mut system = format!("{}\nInstalled apps:\n", sim::marker(sim::HUB_PLANNER));
        for (id, desc) in &installed {
            system.push_str(&format!("- {id}: {desc}\n"));
        }
        let wm = self.memory.build_working_memory(&Scope::Global, self.config.recent_window, private, self.config.working_memory_budget);
        let rendered = wm.render();
        if !rendered.is_empty() {
            system.push_str(&format!("\nMemory:\n{rendered}"));
        }
        system.push_str(
            "\nDecide which installed apps resolve the query. Reply with JSON \
             {\"needs_app\": bool, \"primary\": [...], \"secondary\": [...], \
             \"dispatch\": \"choose\"|\"compare\"|\"sequence\", \"tasks\": [{\"app\", \"query\"}], \"rationale\": \"...\"}.",
        );
        let known: Vec<&str> = installed.iter().map(|(id, _)| id.as_str()).collect();
        let mut messages = vec![ChatTurn::system(system), ChatTurn::user(query)];
        for attempt in 0..2 {
            let turn = self.hub_complete(&messages)?;
            if let Some(plan) = HubPlan::parse(&turn.content) {
                let (plan, dropped) = plan.validate(&known, query);
                self.audit.record("plan", json!({"plan": plan, "dropped": dropped}));
                return Ok(plan);
            }
            if attempt == 0 {
                messages.push(turn);
                messages.push(ChatTurn::user(sim::FORMAT_REMINDER));
            }
        }
        Err(HubError::PlanningFailure)
    }

    pub fn resolve_app_selection(&mut self, query: &str, candidates: &[String]) -> Result<String, HubError> {
        self.transition(HubState::AppSelection);
        match candidates {
            [] => return Err(HubError::UserDeclined("No app can handle this request.".into())),
            [only] => return Ok(only.clone()),
            _ => {}
        }
        let granted: Vec<&String> = {
            let perms = self.perms();
            candidates.iter().filter(|c| perms.check(&PermissionScope::app_selection(c)) == CheckResult::Allow).collect()
        };
        if let [app] = granted.as_slice() {
            let app = (*app).clone();
            self.perms().use_grant(&PermissionScope::app_selection(&app));
            self.trace.consent(ConsentKind::AppSelection, &app, &app, query, true, ConsentVia::Grant);
            return Ok(app);
        }
        let request = AppChoiceRequest {
            query: query.to_string(),
            candidates: candidates.to_vec(),
            options: vec![PromptOption::AllowOnce, PromptOption::AllowSession, PromptOption::AllowAlways],
        };
        match self.user.choose_app(&request) {
            Some((app, option)) if candidates.contains(&app) && option != PromptOption::Deny => {
                if let Some(d @ (GrantDuration::Session | GrantDuration::Permanent)) = option.duration() {
                    self.perms().grant(PermissionScope::app_selection(&app), d)?;
                }
                self.trace.consent(ConsentKind::AppSelection, &app, &app, query, true, ConsentVia::Prompt);
                Ok(app)
            }
            _ => {
                self.trace.consent(ConsentKind::AppSelection, "", "", query, false, ConsentVia::Prompt);
                Err(HubError::UserDeclined("You did not pick an app, so nothing was run.".into()))
            }
        }
    }

    /// Stored entity pairs this app declares a need for, filtered by consent.
    pub fn gather_bootstrap_data(&mut self, app: &str) -> Vec<(String, String)> {
        self.transition(HubState::DataConsent);
        let Some(manifest) = self.registry.get(app).cloned() else { return Vec::new() };
        let mut best: BTreeMap<String, (String, String)> = BTreeMap::new();
        for p in self.memory.entities() {
            if !manifest.needs_entity(&p.entity) {
                continue;
            }
            let replace = match best.get(&p.entity) {
                None => true,
                Some((_, attr)) => attr != app && p.attribution == app,
            };
            if replace {
                best.insert(p.entity.clone(), (p.value, p.attribution));
            }
        }
        let mut out = Vec::new();
        let mut ask = Vec::new();
        for (entity, (value, attribution)) in best {
            if attribution == app {
                self.trace.consent(ConsentKind::DataSharing, app, &entity, &value, true, ConsentVia::SameApp);
                out.push((entity, value));
                continue;
            }
            let scope = PermissionScope::data_sharing(app, &entity);
            let same_value = self.approved_values.get(&scope.canonical()).is_none_or(|v| *v == value);
            if same_value && self.perms().check(&scope) == CheckResult::Allow {
                self.perms().use_grant(&scope);
                self.trace.consent(ConsentKind::DataSharing, app, &entity, &value, true, ConsentVia::Grant);
                out.push((entity, value));
            } else {
                ask.push(ConsentItem { entity, value, source_app: attribution });
            }
        }
        if !ask.is_empty() {
            let request = DataConsentRequest { app: app.to_string(), items: ask };
            let approved = self.user.data_consent(&request);
            for item in request.items {
                let ok = approved.contains(&item.entity);
                self.trace.consent(ConsentKind::DataSharing, app, &item.entity, &item.value, ok, ConsentVia::Prompt);
                self.audit.record("data_consent", json!({"app": app, "entity": item.entity, "approved": ok}));
                if ok {
                    out.push((item.entity, item.value));
                }
            }
        }
        out
    }

    /// Consent for one scope: a live grant answers without prompting,
    /// otherwise the user decides and the decision is recorded.
    fn consent(&mut self, kind: ConsentKind, app: &str, subject: &str, request: PromptRequest, value: Option<&str>) -> bool {
        let scope = request.scope.clone();
        let key = scope.canonical();
        let value_ok = value.is_none_or(|v| self.approved_values.get(&key).is_none_or(|prev| prev == v));
        if value_ok && self.perms().check(&scope) == CheckResult::Allow {
            self.perms().use_grant(&scope);
            self.trace.consent(kind, app, subject, &request.human_text, true, ConsentVia::Grant);
            return true;
        }
        let mut answer = self.user.permission(&request);
        if !request.options.contains(&answer) {
            answer = PromptOption::Deny;
        }
        let approved = answer != PromptOption::Deny;
        if approved && !scope.irreversible {
            if let Some(d @ (GrantDuration::Session | GrantDuration::Permanent)) = answer.duration() {
                if let Err(e) = self.perms().grant(scope.clone(), d) {
                    log::warn!("grant not recorded: {e}");
                }
            }
            if let Some(v) = value {
                self.approved_values.insert(key.clone(), v.to_string());
            }
        }
        self.trace.consent(kind, app, subject, &request.human_text, approved, ConsentVia::Prompt);
        self.audit.record("consent", json!({"scope": key, "answer": answer}));
        approved
    }

    // ------------------------------------------------------------ spokes

    fn key_for(app: Option<&str>, mode: SpokeMode) -> String {
        match (app, mode) {
            (None, _) | (_, SpokeMode::Vanilla) => VANILLA_KEY.to_string(),
            (Some(a), SpokeMode::Private) => private_key(a),
            (Some(a), SpokeMode::Standard) => a.to_string(),
        }
    }

    /// Existing live spoke for the app in this session, or a newly launched
    /// confined one. Returns the handle key.
    pub fn spawn_or_attach(&mut self, app: Option<&str>, mode: SpokeMode) -> Result<String, HubError> {
        self.begin_session();
        let key = Self::key_for(app, mode);
        if self.spokes.contains_key(&key) {
            return Ok(key);
        }
        let manifest: Option<AppManifest> = match app {
            Some(a) if mode != SpokeMode::Vanilla => {
                Some(self.registry.get(a).cloned().ok_or_else(|| HubError::UnknownApp(a.to_string()))?)
            }
            _ => None,
        };
        let app_id = manifest.as_ref().map(|m| m.app_id.clone()).unwrap_or_else(|| VANILLA.to_string());
        let dir_name = key.trim_start_matches('#').replace('/', ".");
        let scratch = self.data_dir.join("spokes").join(&dir_name);
        let mut args = self.config.spoke_args.clone();
        if mode == SpokeMode::Private {
            args.push("--private".into());
        } else {
            args.push("--store".into());
            args.push(scratch.join("store.kv").to_string_lossy().into_owned());
        }
        let launch_failure = |reason: String| HubError::LaunchFailure { app: app_id.clone(), reason };
        let mut process = sandbox::launch(&self.spoke_bin, &args, &self.config.sandbox, &scratch)
            .map_err(|e| launch_failure(e.to_string()))?;
        let timeout = Duration::from_secs(self.config.spoke_timeout_secs.max(1));
        process.channel.set_read_timeout(Some(timeout)).map_err(|e| launch_failure(e.to_string()))?;
        let isolation = match read_frame(&mut process.channel) {
            Ok(Frame::Control(Control::Ready { isolation })) => isolation,
            other => {
                let _ = process.child.kill();
                let _ = process.child.wait();
                return Err(launch_failure(format!("no ready signal: {other:?}")));
            }
        };
        if isolation == Isolation::Reduced {
            self.audit.record("reduced_isolation", json!({"app": app_id}));
            if !self.config.allow_reduced_isolation {
                let _ = process.child.kill();
                let _ = process.child.wait();
                return Err(launch_failure("syscall filter could not be installed".into()));
            }
        }
        let sid = loop {
            let sid = SpokeSid::mint(&mut self.rng);
            let taken = self.spokes.values().any(|h| h.sid == sid) || self.registry.get(sid.as_str()).is_some();
            if !taken {
                break sid;
            }
        };
        let broadcast: Vec<String> = match &manifest {
            None => Vec::new(),
            Some(m) => self
                .registry
                .catalog()
                .list_functionalities()
                .into_iter()
                .filter(|f| self.registry.providers(f).iter().any(|p| p.app_id != m.app_id))
                .collect(),
        };
        let backend = manifest.as_ref().and_then(|m| m.backend_override.clone()).unwrap_or_else(|| self.config.backend.clone());
        let init = Control::Init { app: manifest.map(Box::new), mode, broadcast, backend, rules: self.config.rules() };
        if let Err(e) = write_frame(&mut process.channel, &Frame::Control(init)) {
            let _ = process.child.kill();
            let _ = process.child.wait();
            return Err(launch_failure(e.to_string()));
        }
        self.audit.record("spoke_launch", json!({"app": app_id, "sid": sid.as_str(), "mode": mode, "isolation": isolation}));
        self.spokes.insert(key.clone(), SpokeHandle { app_id, sid, mode, isolation, process });
        Ok(key)
    }

    fn channel(&self, key: &str) -> Result<UnixStream, HubError> {
        let h = self.spokes.get(key).ok_or_else(|| HubError::SpokeCrashed { app: key.to_string(), status: "not running".into() })?;
        h.process
            .channel
            .try_clone()
            .map_err(|e| HubError::SpokeCrashed { app: h.app_id.clone(), status: e.to_string() })
    }

    fn principal(&self, key: &str) -> String {
        self.spokes.get(key).map(|h| h.app_id.clone()).unwrap_or_else(|| key.to_string())
    }

    /// Removes a spoke whose channel failed and classifies the failure.
    fn lost(&mut self, key: &str, err: ChannelError) -> HubError {
        let app = self.principal(key);
        let Some(mut h) = self.spokes.remove(key) else {
            return HubError::SpokeCrashed { app, status: err.to_string() };
        };
        self.probes.retain(|(req, _), prov| req != key && prov != key);
        let timed_out = matches!(&err, ChannelError::Io(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut));
        if timed_out {
            let _ = h.process.child.kill();
            let _ = h.process.child.wait();
            self.audit.record("spoke_timeout", json!({"app": app}));
            return HubError::SpokeTimeout { app };
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        let status = loop {
            match h.process.child.try_wait() {
                Ok(Some(s)) => break s,
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                _ => {
                    let _ = h.process.child.kill();
                    match h.process.child.wait() {
                        Ok(s) => break s,
                        Err(_) => return HubError::SpokeCrashed { app, status: err.to_string() },
                    }
                }
            }
        };
        let status = match status.signal() {
            Some(sig) => format!("signal {sig}"),
            None => format!("exit {}", status.code().unwrap_or(-1)),
        };
        self.audit.record("spoke_crash", json!({"app": app, "status": status}));
        HubError::SpokeCrashed { app, status }
    }

    fn send(&mut self, key: &str, frame: Frame) -> Result<(), HubError> {
        let mut ch = self.channel(key)?;
        match write_frame(&mut ch, &frame) {
            Ok(()) => Ok(()),
            Err(e) => Err(self.lost(key, e)),
        }
    }

    /// Reads frames from one spoke, servicing its requests, until the
    /// awaited kind of frame arrives.
    fn pump(&mut self, key: &str, until: Await) -> Result<Frame, HubError> {
        let mut ch = self.channel(key)?;
        loop {
            let frame = match read_frame(&mut ch) {
                Ok(f) => f,
                Err(e) => return Err(self.lost(key, e)),
            };
            let done = match (&frame, until) {
                (Frame::Control(Control::Outcome { .. } | Control::Failed { .. }), Await::Outcome) => true,
                (Frame::Isc(IscEnvelope::Response { .. }) | Frame::Control(Control::IscFailure { .. }), Await::IscReply) => true,
                // A spoke that fails while serving a collaboration request
                // reports the failure instead of a response.
                (Frame::Control(Control::Failed { .. }), Await::IscReply) => true,
                _ => false,
            };
            if done {
                return Ok(frame);
            }
            if let Some(reply) = self.service(key, frame)? {
                if let Err(e) = write_frame(&mut ch, &reply) {
                    return Err(self.lost(key, e));
                }
            }
        }
    }

    fn service(&mut self, key: &str, frame: Frame) -> Result<Option<Frame>, HubError> {
        let app = self.principal(key);
        Ok(match frame {
            Frame::Control(Control::Prompt { phase, text, micros }) => {
                self.trace.prompt(&app, &phase, &text, micros);
                None
            }
            Frame::Control(Control::ToolEvent { tool, args, ok }) => {
                self.audit.record("tool_event", json!({"app": app, "tool": tool, "ok": ok}));
                self.trace.tool(&app, &tool, &args, ok);
                None
            }
            Frame::Control(Control::NeedUserData { entity }) => {
                let value = self.user_data_for(&app, &entity);
                Some(Frame::Control(Control::UserData { entity, value }))
            }
            Frame::Control(Control::Confirm { tool, preview }) => {
                let approved = self.confirm_irreversible(&app, &tool, &preview);
                Some(Frame::Control(Control::ConfirmResult { approved }))
            }
            Frame::Control(Control::Egress { url, body }) => {
                let (ok, body) = match self.egress(&app, &url, &body) {
                    Ok(b) => (true, b),
                    Err(b) => (false, b),
                };
                Some(Frame::Control(Control::EgressResult { ok, body }))
            }
            Frame::Control(Control::Llm { messages, tools }) => {
                let (turn, error) = match self.spoke_complete(key, &messages, &tools) {
                    Ok(t) => (Some(t), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                Some(Frame::Control(Control::LlmResult { turn, error }))
            }
            Frame::Isc(IscEnvelope::Probe { functionality, .. }) => Some(match self.mediate_probe(key, &functionality) {
                Ok(env) => Frame::Isc(env),
                Err(code) => Frame::Control(Control::IscFailure { code }),
            }),
            Frame::Isc(env @ IscEnvelope::Request { .. }) => Some(match self.mediate_request(key, env) {
                Ok((sid, payload)) => Frame::Isc(IscEnvelope::Response { sid, payload }),
                Err(code) => Frame::Control(Control::IscFailure { code }),
            }),
            Frame::Garbled(e) => {
                self.audit.record("isc_drop", json!({"app": app, "stage": "decode", "reason": e.to_string()}));
                Some(Frame::Control(Control::IscFailure { code: FailureCode::Malformed }))
            }
            Frame::Isc(env) => {
                self.audit.record("isc_drop", json!({"app": app, "stage": "unsolicited", "kind": env.kind()}));
                None
            }
            Frame::Control(other) => {
                self.audit.record("protocol_violation", json!({"app": app, "frame": format!("{other:?}").chars().take(80).collect::<String>()}));
                None
            }
        })
    }

    fn spoke_complete(&mut self, key: &str, messages: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, LlmError> {
        if !self.spoke_backends.contains_key(key) {
            let app = self.spokes.get(key).map(|h| h.app_id.clone()).unwrap_or_default();
            let spec = self.registry.get(&app).and_then(|m| m.backend_override.clone()).unwrap_or_else(|| self.config.backend.clone());
            self.spoke_backends.insert(key.to_string(), llm::build(&spec)?);
        }
        self.spoke_backends.get_mut(key).expect("backend inserted").complete(messages, tools)
    }

    fn run_app(&mut self, app: &str, query: &str, private: bool) -> Result<String, HubError> {
        let bootstrap = if private { Vec::new() } else { self.gather_bootstrap_data(app) };
        let mode = if private { SpokeMode::Private } else { SpokeMode::Standard };
        self.transition(HubState::SpokeRunning);
        let key = self.spawn_or_attach(Some(app), mode)?;
        let context =
            self.memory.build_working_memory(&Scope::Spoke(app.to_string()), self.config.recent_window, private, self.config.working_memory_budget);
        self.send(&key, Frame::Control(Control::Invoke { query: query.to_string(), bootstrap, context }))?;
        self.outcome(&key)
    }

    fn run_vanilla(&mut self, query: &str) -> Result<String, HubError> {
        self.transition(HubState::SpokeRunning);
        let key = self.spawn_or_attach(None, SpokeMode::Vanilla)?;
        let context = self.memory.build_working_memory(
            &Scope::Spoke(SYSTEM.to_string()),
            self.config.recent_window,
            false,
            self.config.working_memory_budget,
        );
        self.send(&key, Frame::Control(Control::Invoke { query: query.to_string(), bootstrap: Vec::new(), context }))?;
        self.outcome(&key)
    }

    /// Composes several spoke answers in a vanilla spoke, which sees only
    /// the answer texts.
    fn synthesize(&mut self, query: &str, responses: &[String]) -> Result<String, HubError> {
        self.transition(HubState::SpokeRunning);
        let key = self.spawn_or_attach(None, SpokeMode::Vanilla)?;
        self.send(&key, Frame::Control(Control::Synthesize { query: query.to_string(), responses: responses.to_vec() }))?;
        self.outcome(&key)
    }

    fn outcome(&mut self, key: &str) -> Result<String, HubError> {
        match self.pump(key, Await::Outcome)? {
            Frame::Control(Control::Outcome { outcome }) => Ok(outcome.response),
            Frame::Control(Control::Failed { kind, message }) => {
                Err(HubError::SpokeFailed { app: self.principal(key), kind, message })
            }
            _ => unreachable!("pump returns only awaited frames"),
        }
    }

    // ------------------------------------------------------------ spoke requests

    fn user_data_for(&mut self, app: &str, entity: &str) -> Option<String> {
        if let Some(found) = self.memory.cross_spoke_lookup(entity, app) {
            if found.same_app {
                self.trace.consent(ConsentKind::DataSharing, app, entity, &found.value, true, ConsentVia::SameApp);
                return Some(found.value);
            }
            let display = self.display_name(app);
            let source = self.display_name(&found.attribution);
            let request = PromptRequest::new(
                PermissionScope::data_sharing(app, entity),
                format!("{display} asks for your {entity}. The hub has \"{}\" from {source}. Share it?", found.value),
                None,
            );
            if self.consent(ConsentKind::DataSharing, app, entity, request, Some(&found.value)) {
                return Some(found.value);
            }
        }
        let value = self.user.provide_data(&UserDataRequest { app: app.to_string(), entity: entity.to_string() })?;
        self.trace.manual_data.push(ManualData { query: self.trace.query, app: app.into(), entity: entity.into(), value: value.clone() });
        if let Err(e) = self.memory.upsert_entity(entity, &value, app) {
            log::warn!("could not store supplied {entity}: {e}");
        }
        Some(value)
    }

    fn display_name(&self, app: &str) -> String {
        self.registry.get(app).map(|m| m.display_name.clone()).unwrap_or_else(|| app.to_string())
    }

    fn confirm_irreversible(&mut self, app: &str, tool: &str, preview: &str) -> bool {
        let known = self.registry.get(app).is_some_and(|m| m.is_irreversible(tool));
        let display = self.display_name(app);
        let request = PromptRequest::new(
            PermissionScope::data_egress(app, tool, true),
            format!("{display} wants to perform an irreversible action.\n{preview}"),
            (!known).then(|| "This action is not declared irreversible by the app.".to_string()),
        );
        self.consent(ConsentKind::Irreversible, app, tool, request, None)
    }

    fn egress(&mut self, app: &str, url: &str, body: &str) -> Result<String, String> {
        let root = self.registry.get(app).map(|m| m.root_domain.clone()).unwrap_or_default();
        let host = host_of(url).unwrap_or_default();
        let domain = self.egress.domain_of(&host).ok();
        let scope = PermissionScope::data_egress(app, domain.as_deref().unwrap_or(&host), false);
        let mut check = self.perms().check(&scope);
        let mut granted_now = false;
        if check != CheckResult::Allow && domain.as_deref() == Some(root.as_str()) && !root.is_empty() {
            let display = self.display_name(app);
            let request = PromptRequest::new(scope.clone(), format!("{display} wants to send data to {host}:\n{body}"), None);
            let kind_subject = domain.clone().unwrap_or_default();
            if self.consent(ConsentKind::Egress, app, &kind_subject, request, None) {
                check = CheckResult::Allow;
                granted_now = true;
            }
        }
        let decision = self.egress.guard(&host, app, &root, check);
        self.audit.record("egress", json!({"app": app, "host": host, "decision": decision}));
        match decision {
            EgressDecision::Allow => {
                if !granted_now {
                    self.perms().use_grant(&scope);
                }
                self.transport.post(url, body)
            }
            EgressDecision::Block(reason) => Err(format!("egress blocked: {reason:?}")),
        }
    }

    // ------------------------------------------------------------ collaboration

    fn mediate_probe(&mut self, req_key: &str, functionality: &str) -> Result<IscEnvelope, FailureCode> {
        let previous = self.state;
        self.transition(HubState::IscMediation);
        let result = self.probe_inner(req_key, functionality);
        self.transition(previous);
        result
    }

    fn probe_inner(&mut self, req_key: &str, functionality: &str) -> Result<IscEnvelope, FailureCode> {
        let requester = self.principal(req_key);
        let Some(descriptor) = self.registry.catalog().get(functionality).cloned() else {
            self.audit.record("isc_probe", json!({"requester": requester, "result": FailureCode::NoProvider}));
            return Err(FailureCode::NoProvider);
        };
        let all: Vec<String> = self.registry.providers(functionality).iter().map(|a| a.app_id.clone()).collect();
        let others: Vec<String> = all.iter().filter(|a| **a != requester).cloned().collect();
        let provider = match others.as_slice() {
            [] => {
                let code = if all.contains(&requester) { FailureCode::SelfOnly } else { FailureCode::NoProvider };
                self.audit.record("isc_probe", json!({"requester": requester, "result": code}));
                return Err(code);
            }
            [one] => one.clone(),
            _ => {
                let request = AppChoiceRequest {
                    query: format!("{} needs {functionality}. Which app should provide it?", self.display_name(&requester)),
                    candidates: others.clone(),
                    options: vec![PromptOption::AllowOnce],
                };
                match self.user.choose_app(&request) {
                    Some((app, _)) if others.contains(&app) => app,
                    _ => return Err(FailureCode::PermissionDenied),
                }
            }
        };
        let assessment = assess_collaboration(&requester, functionality, &all, &self.plan);
        let request = PromptRequest::new(
            PermissionScope::collaboration(&requester, &provider),
            format!(
                "{} wants to use {functionality} from {}.",
                self.display_name(&requester),
                self.display_name(&provider)
            ),
            Some(assessment.text()),
        );
        if !self.consent(ConsentKind::Collaboration, &requester, &provider, request, None) {
            return Err(FailureCode::PermissionDenied);
        }
        let prov_key = self.spawn_or_attach(Some(&provider), SpokeMode::Standard).map_err(|e| {
            log::warn!("provider unavailable: {e}");
            FailureCode::ProviderFailed
        })?;
        let sid = self.spokes[&prov_key].sid.clone();
        self.probes.insert((req_key.to_string(), functionality.to_string()), prov_key);
        self.audit.record(
            "isc_probe",
            json!({"requester": requester, "provider": provider, "functionality": functionality, "assessment": assessment.verdict}),
        );
        Ok(IscEnvelope::FormatResponse {
            sid,
            request_format: descriptor.request_fields.clone(),
            response_format: descriptor.response_fields.clone(),
        })
    }

    /// Validates, consents to and relays one request; returns the provider
    /// sid and the validated response payload.
    fn mediate_request(&mut self, req_key: &str, env: IscEnvelope) -> Result<(SpokeSid, Payload), FailureCode> {
        let previous = self.state;
        self.transition(HubState::IscMediation);
        let result = self.request_inner(req_key, env);
        self.transition(previous);
        result
    }

    fn drop_message(&mut self, requester: &str, stage: &str, reason: &str) -> FailureCode {
        self.audit.record("isc_drop", json!({"app": requester, "stage": stage, "reason": reason}));
        FailureCode::Malformed
    }

    fn request_inner(&mut self, req_key: &str, env: IscEnvelope) -> Result<(SpokeSid, Payload), FailureCode> {
        let requester = self.principal(req_key);
        let IscEnvelope::Request { sid, functionality, payload } = &env else {
            return Err(self.drop_message(&requester, "request", "not a request"));
        };
        let Some(prov_key) = self.probes.get(&(req_key.to_string(), functionality.clone())).cloned() else {
            self.audit.record("isc_drop", json!({"app": requester, "stage": "request", "reason": "no probe"}));
            return Err(FailureCode::NoProbe);
        };
        let Some(provider) = self.spokes.get(&prov_key) else { return Err(FailureCode::ProviderFailed) };
        let (provider_sid, provider_app) = (provider.sid.clone(), provider.app_id.clone());
        if *sid != provider_sid {
            return Err(self.drop_message(&requester, "request", &crate::isc::Malformed::Sid.to_string()));
        }
        let Some(descriptor) = self.registry.catalog().get(functionality).cloned() else {
            return Err(self.drop_message(&requester, "request", "unknown functionality"));
        };
        if let Err(m) = validate_message(&env, &descriptor, &self.config.rules()) {
            return Err(self.drop_message(&requester, "request", &m.to_string()));
        }
        let assessment = assess_collaboration(&requester, functionality, &[provider_app.clone()], &self.plan);
        let request = PromptRequest::new(
            PermissionScope::collaboration(&requester, &provider_app),
            format!(
                "{} sends this {functionality} request to {}:\n{}",
                self.display_name(&requester),
                self.display_name(&provider_app),
                preview(payload)
            ),
            Some(assessment.text()),
        );
        if !self.consent(ConsentKind::Collaboration, &requester, &provider_app, request, None) {
            return Err(FailureCode::PermissionDenied);
        }
        let requester_sid = self.spokes.get(req_key).map(|h| h.sid.clone()).ok_or(FailureCode::ProviderFailed)?;
        let relay = IscEnvelope::Request { sid: requester_sid.clone(), functionality: functionality.clone(), payload: payload.clone() };
        self.audit.record("isc_relay", json!({"stage": "request", "from": requester, "to": provider_app, "functionality": functionality}));
        if self.send(&prov_key, Frame::Isc(relay)).is_err() {
            return Err(FailureCode::ProviderFailed);
        }
        let reply = match self.pump(&prov_key, Await::IscReply) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("provider failed: {e}");
                return Err(FailureCode::ProviderFailed);
            }
        };
        let (reply_sid, reply_payload) = match reply {
            Frame::Isc(IscEnvelope::Response { sid, payload }) => (sid, payload),
            Frame::Control(Control::IscFailure { code }) => return Err(code),
            _ => return Err(FailureCode::ProviderFailed),
        };
        if reply_sid != requester_sid {
            return Err(self.drop_message(&provider_app, "response", &crate::isc::Malformed::Sid.to_string()));
        }
        let response = IscEnvelope::Response { sid: provider_sid.clone(), payload: reply_payload };
        if let Err(m) = validate_message(&response, &descriptor, &self.config.rules()) {
            return Err(self.drop_message(&provider_app, "response", &m.to_string()));
        }
        let IscEnvelope::Response { payload: reply_payload, .. } = response else { unreachable!() };
        let request = PromptRequest::new(
            PermissionScope::collaboration(&requester, &provider_app),
            format!(
                "{} returns this {functionality} response to {}:\n{}",
                self.display_name(&provider_app),
                self.display_name(&requester),
                preview(&reply_payload)
            ),
            Some(assessment.text()),
        );
        if !self.consent(ConsentKind::Collaboration, &requester, &provider_app, request, None) {
            return Err(FailureCode::PermissionDenied);
        }
        self.audit.record("isc_relay", json!({"stage": "response", "from": provider_app, "to": requester, "functionality": functionality}));
        Ok((provider_sid, reply_payload))
    }

    /// Probes on behalf of `requester`, launching its spoke if needed.
    pub fn isc_probe(&mut self, requester: &str, functionality: &str) -> Result<IscEnvelope, FailureCode> {
        let key = self.spawn_or_attach(Some(requester), SpokeMode::Standard).map_err(|_| FailureCode::ProviderFailed)?;
        self.mediate_probe(&key, functionality)
    }

    /// Mediates one request envelope as if `requester`'s spoke had sent it.
    pub fn isc_request(&mut self, requester: &str, env: IscEnvelope) -> Result<Payload, FailureCode> {
        let key = self.spawn_or_attach(Some(requester), SpokeMode::Standard).map_err(|_| FailureCode::ProviderFailed)?;
        self.mediate_request(&key, env).map(|(_, p)| p)
    }

    /// Mediates raw collaboration bytes as if `requester`'s spoke had sent
    /// them; undecodable input is dropped.
    pub fn isc_deliver_raw(&mut self, requester: &str, record: &[u8]) -> Result<Payload, FailureCode> {
        match crate::isc::decode(record) {
            Ok(env) => self.isc_request(requester, env),
            Err(e) => Err(self.drop_message(requester, "decode", &e.to_string())),
        }
    }
}

impl Drop for Hub {
    fn drop(&mut self) {
        self.end_session();
    }
}
