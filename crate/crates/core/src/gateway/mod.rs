//! Local HTTP and server-sent-event API over one hub, and the terminal chat.
//! The hub runs on its own thread; queries are serialized through it.

mod broker;
mod repl;

use std::convert::Infallible;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

pub use broker::{Answer, AnswerError, Broker, GatewayUser};
pub use repl::{parse_option, run_repl, TerminalUser};

use crate::apps::{AppManifest, Registry};
use crate::config::HubConfig;
use crate::hub::{Hub, HubError, UiEvent, UiEventKind};
use crate::permission::{PermissionGrant, PermissionManager, PromptOption};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppInfo {
    pub app_id: String,
    pub display_name: String,
    pub description: String,
    pub root_domain: String,
    pub installed: bool,
    pub functionalities: Vec<String>,
}

fn app_list(hub: &Hub) -> Vec<AppInfo> {
    hub.registry()
        .store()
        .map(|m| AppInfo {
            app_id: m.app_id.clone(),
            display_name: m.display_name.clone(),
            description: m.description.clone(),
            root_domain: m.root_domain.clone(),
            installed: hub.registry().is_installed(&m.app_id),
            functionalities: m.functionalities_offered.iter().map(|o| o.name.clone()).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: u64,
    pub text: String,
    pub apps: Vec<String>,
    pub declined: bool,
}

enum Command {
    Query { id: u64, text: String, private: bool, reply: oneshot::Sender<Result<QueryOutcome, String>> },
    Install { app: InstallRequest, reply: oneshot::Sender<Result<AppInfo, (StatusCode, String)>> },
    EndSession { reply: oneshot::Sender<()> },
    Shutdown,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InstallRequest {
    FromStore { app_id: String },
    Manifest { manifest: String },
}

/// A running hub thread plus everything the HTTP handlers share.
#[derive(Clone)]
pub struct Gateway {
    broker: Arc<Broker>,
    commands: mpsc::Sender<Command>,
    apps: Arc<Mutex<Vec<AppInfo>>>,
    grants: Arc<Mutex<PermissionManager>>,
    next_query: Arc<Mutex<u64>>,
    hub_thread: Arc<Mutex<Option<JoinHandle<()>>>>,
}

fn hub_loop(mut hub: Hub, rx: mpsc::Receiver<Command>, broker: Arc<Broker>, apps: Arc<Mutex<Vec<AppInfo>>>) {
    for cmd in rx {
        match cmd {
            Command::Query { id, text, private, reply } => {
                let result = if private { hub.handle_private_query(&text) } else { hub.handle_user_query(&text) };
                let outcome = match result {
                    Ok(r) => {
                        broker.emit(UiEventKind::Status, None, json!({"query_id": id, "done": true, "declined": r.declined}));
                        Ok(QueryOutcome { query_id: id, text: r.text, apps: r.apps, declined: r.declined })
                    }
                    Err(e) => {
                        broker.emit(UiEventKind::Status, None, json!({"query_id": id, "done": true, "error": e.to_string()}));
                        Err(e.to_string())
                    }
                };
                let _ = reply.send(outcome);
            }
            Command::Install { app, reply } => {
                let result = match app {
                    InstallRequest::FromStore { app_id } => hub.install(&app_id).map(|_| app_id),
                    InstallRequest::Manifest { manifest } => match AppManifest::load(&manifest) {
                        Ok(m) => {
                            let id = m.app_id.clone();
                            hub.add_app(m).map(|_| id)
                        }
                        Err(e) => Err(HubError::Setup(e.to_string())),
                    },
                };
                let list = app_list(&hub);
                *apps.lock().unwrap_or_else(|e| e.into_inner()) = list.clone();
                let _ = reply.send(match result {
                    Ok(id) => Ok(list.into_iter().find(|a| a.app_id == id).expect("installed app is listed")),
                    Err(HubError::Registry(crate::apps::RegistryError::UnknownApp(a))) => Err((StatusCode::NOT_FOUND, format!("unknown app {a}"))),
                    Err(HubError::Registry(crate::apps::RegistryError::Duplicate(a))) => Err((StatusCode::CONFLICT, format!("app {a} is already in the store"))),
                    Err(e) => Err((StatusCode::BAD_REQUEST, e.to_string())),
                });
            }
            Command::EndSession { reply } => {
                hub.end_session();
                let _ = reply.send(());
            }
            Command::Shutdown => break,
        }
    }
    hub.end_session();
}

impl Gateway {
    /// Starts a hub over the built-in store.
    pub fn start(config: HubConfig) -> Result<Gateway, HubError> {
        Self::start_with_registry(config, Registry::builtin())
    }

    pub fn start_with_registry(config: HubConfig, registry: Registry) -> Result<Gateway, HubError> {
        let broker = Broker::new(Duration::from_secs(config.prompt_timeout_secs));
        let user = GatewayUser::new(broker.clone());
        let hub = Hub::with_registry(config, registry, Box::new(user))?;
        let apps = Arc::new(Mutex::new(app_list(&hub)));
        let grants = hub.permissions();
        let (tx, rx) = mpsc::channel();
        let thread = {
            let (broker, apps) = (broker.clone(), apps.clone());
            std::thread::Builder::new()
                .name("hub".into())
                .spawn(move || hub_loop(hub, rx, broker, apps))
                .map_err(|e| HubError::Setup(e.to_string()))?
        };
        Ok(Gateway {
            broker,
            commands: tx,
            apps,
            grants,
            next_query: Arc::new(Mutex::new(0)),
            hub_thread: Arc::new(Mutex::new(Some(thread))),
        })
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/query", post(post_query))
            .route("/events", get(get_events))
            .route("/permission", post(post_permission))
            .route("/data-consent", post(post_data_consent))
            .route("/app-choice", post(post_app_choice))
            .route("/user-data", post(post_user_data))
            .route("/apps", get(get_apps).post(post_apps))
            .route("/grants", get(get_grants))
            .route("/grants/{id}", delete(delete_grant))
            .route("/session/end", post(post_session_end))
            .with_state(self.clone())
    }

    /// Serves the API on `listener` until the process ends.
    pub async fn serve(self, listener: tokio::net::TcpListener) -> std::io::Result<()> {
        axum::serve(listener, self.router()).await
    }

    /// Stops the hub thread after the command in progress, closing the
    /// session and its spokes.
    pub fn shutdown(&self) {
        let _ = self.commands.send(Command::Shutdown);
        let thread = self.hub_thread.lock().unwrap_or_else(|e| e.into_inner()).take();
        if let Some(t) = thread {
            let _ = t.join();
        }
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": message.into()}))).into_response()
}

fn hub_gone() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "hub stopped")
}

#[derive(Debug, Deserialize)]
struct QueryBody {
    text: String,
    #[serde(default)]
    private: bool,
    #[serde(default)]
    wait: bool,
}

async fn post_query(State(gw): State<Gateway>, Json(body): Json<QueryBody>) -> Response {
    let id = {
        let mut n = gw.next_query.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        *n
    };
    let (reply, rx) = oneshot::channel();
    if gw.commands.send(Command::Query { id, text: body.text, private: body.private, reply }).is_err() {
        return hub_gone();
    }
    if !body.wait {
        return (StatusCode::ACCEPTED, Json(json!({"query_id": id}))).into_response();
    }
    match rx.await {
        Ok(Ok(outcome)) => Json(outcome).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(_) => hub_gone(),
    }
}

#[derive(Debug, Deserialize)]
struct EventsParams {
    since: Option<u64>,
}

fn sse_event(e: &UiEvent) -> Result<Event, Infallible> {
    let kind = serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    Ok(Event::default().id(e.seq.to_string()).event(kind).data(serde_json::to_string(e).expect("event serializes")))
}

async fn get_events(State(gw): State<Gateway>, Query(params): Query<EventsParams>, headers: HeaderMap) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let resume = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.parse().ok());
    let since = params.since.or(resume).unwrap_or(0);
    let (backlog, rx) = gw.broker.subscribe(since);
    let last = backlog.last().map(|e| e.seq).unwrap_or(since);
    let live = stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if e.seq > last => {
                    let seq = e.seq;
                    return Some((e, (rx, seq)));
                }
                Ok(_) | Err(tokio::sync::broadcast::error::RecvError::Lagged(_)) => continue,
                Err(tokio::sync::broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let events = stream::iter(backlog).chain(live).map(|e| sse_event(&e));
    Sse::new(events).keep_alive(KeepAlive::default())
}

fn answer(gw: &Gateway, id: &str, a: Answer) -> Response {
    match gw.broker.answer(id, a) {
        Ok(()) => (StatusCode::OK, Json(json!({"ok": true}))).into_response(),
        Err(AnswerError::NotFound(id)) => error(StatusCode::NOT_FOUND, format!("no pending request {id}")),
        Err(AnswerError::Invalid(m)) => error(StatusCode::UNPROCESSABLE_ENTITY, m),
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Decision {
    Allow,
    Deny,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DurationChoice {
    #[default]
    Once,
    Session,
    Always,
}

impl DurationChoice {
    fn option(self) -> PromptOption {
        match self {
            DurationChoice::Once => PromptOption::AllowOnce,
            DurationChoice::Session => PromptOption::AllowSession,
            DurationChoice::Always => PromptOption::AllowAlways,
        }
    }
}

#[derive(Debug, Deserialize)]
struct PermissionBody {
    correlation_id: String,
    decision: Decision,
    #[serde(default)]
    duration: DurationChoice,
}

async fn post_permission(State(gw): State<Gateway>, Json(b): Json<PermissionBody>) -> Response {
    let option = match b.decision {
        Decision::Deny => PromptOption::Deny,
        Decision::Allow => b.duration.option(),
    };
    answer(&gw, &b.correlation_id, Answer::Permission(option))
}

#[derive(Debug, Deserialize)]
struct DataConsentBody {
    correlation_id: String,
    approved_items: Vec<String>,
}

async fn post_data_consent(State(gw): State<Gateway>, Json(b): Json<DataConsentBody>) -> Response {
    answer(&gw, &b.correlation_id, Answer::DataConsent(b.approved_items))
}

#[derive(Debug, Deserialize)]
struct AppChoiceBody {
    correlation_id: String,
    app: Option<String>,
    #[serde(default)]
    duration: DurationChoice,
}

async fn post_app_choice(State(gw): State<Gateway>, Json(b): Json<AppChoiceBody>) -> Response {
    answer(&gw, &b.correlation_id, Answer::AppChoice(b.app.map(|a| (a, b.duration.option()))))
}

#[derive(Debug, Deserialize)]
struct UserDataBody {
    correlation_id: String,
    value: Option<String>,
}

async fn post_user_data(State(gw): State<Gateway>, Json(b): Json<UserDataBody>) -> Response {
    answer(&gw, &b.correlation_id, Answer::UserData(b.value))
}

async fn get_apps(State(gw): State<Gateway>) -> Json<Vec<AppInfo>> {
    Json(gw.apps.lock().unwrap_or_else(|e| e.into_inner()).clone())
}

async fn post_apps(State(gw): State<Gateway>, Json(app): Json<InstallRequest>) -> Response {
    let (reply, rx) = oneshot::channel();
    if gw.commands.send(Command::Install { app, reply }).is_err() {
        return hub_gone();
    }
    match rx.await {
        Ok(Ok(info)) => (StatusCode::CREATED, Json(info)).into_response(),
        Ok(Err((status, m))) => error(status, m),
        Err(_) => hub_gone(),
    }
}

async fn get_grants(State(gw): State<Gateway>) -> Json<Vec<PermissionGrant>> {
    Json(gw.grants.lock().unwrap_or_else(|e| e.into_inner()).grants())
}

async fn delete_grant(State(gw): State<Gateway>, Path(id): Path<u64>) -> Response {
    if gw.grants.lock().unwrap_or_else(|e| e.into_inner()).revoke_id(id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        error(StatusCode::NOT_FOUND, format!("no grant {id}"))
    }
}

async fn post_session_end(State(gw): State<Gateway>) -> Response {
    let (reply, rx) = oneshot::channel();
    if gw.commands.send(Command::EndSession { reply }).is_err() {
        return hub_gone();
    }
    match rx.await {
        Ok(()) => (StatusCode::OK, Json(json!({"ok": true}))).into_response(),
        Err(_) => hub_gone(),
    }
}
