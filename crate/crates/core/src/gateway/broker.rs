//! The UI event stream and the questions waiting for an answer.

use std::collections::HashMap;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::hub::{AppChoiceRequest, DataConsentRequest, UiEvent, UiEventKind, User, UserDataRequest};
use crate::permission::{PromptOption, PromptRequest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Answer {
    Permission(PromptOption),
    DataConsent(Vec<String>),
    AppChoice(Option<(String, PromptOption)>),
    UserData(Option<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnswerError {
    #[error("no pending request {0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
}

/// What a pending question accepts.
#[derive(Debug, Clone)]
enum Accepts {
    Permission(Vec<PromptOption>),
    DataConsent(Vec<String>),
    AppChoice(Vec<String>, Vec<PromptOption>),
    UserData,
}

struct Pending {
    accepts: Accepts,
    reply: mpsc::Sender<Answer>,
}

#[derive(Default)]
struct State {
    seq: u64,
    next_id: u64,
    log: Vec<UiEvent>,
    pending: HashMap<String, Pending>,
}

/// Ordered, replayable event log plus the table of open questions. Every
/// question is answered through [`Broker::answer`] or denied at timeout.
pub struct Broker {
    state: Mutex<State>,
    events: broadcast::Sender<UiEvent>,
    timeout: Duration,
}

impl Broker {
    pub fn new(timeout: Duration) -> Arc<Self> {
        let (events, _) = broadcast::channel(1024);
        Arc::new(Broker { state: Mutex::new(State::default()), events, timeout })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn push(&self, state: &mut State, kind: UiEventKind, correlation_id: Option<String>, payload: Value) -> UiEvent {
        state.seq += 1;
        let event = UiEvent { seq: state.seq, kind, correlation_id, payload };
        state.log.push(event.clone());
        let _ = self.events.send(event.clone());
        event
    }

    pub fn emit(&self, kind: UiEventKind, correlation_id: Option<String>, payload: Value) -> UiEvent {
        let mut state = self.lock();
        self.push(&mut state, kind, correlation_id, payload)
    }

    /// Events after `since`, and a receiver for everything emitted later.
    pub fn subscribe(&self, since: u64) -> (Vec<UiEvent>, broadcast::Receiver<UiEvent>) {
        let state = self.lock();
        let backlog = state.log.iter().filter(|e| e.seq > since).cloned().collect();
        (backlog, self.events.subscribe())
    }

    pub fn pending(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.lock().pending.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Publishes a question and blocks until it is answered or times out.
    fn ask(&self, kind: UiEventKind, accepts: Accepts, payload: Value) -> Option<Answer> {
        let (tx, rx) = mpsc::channel();
        let id = {
            let mut state = self.lock();
            state.next_id += 1;
            let id = format!("req-{}", state.next_id);
            state.pending.insert(id.clone(), Pending { accepts, reply: tx });
            self.push(&mut state, kind, Some(id.clone()), payload);
            id
        };
        match rx.recv_timeout(self.timeout) {
            Ok(answer) => Some(answer),
            Err(_) => {
                let mut state = self.lock();
                state.pending.remove(&id);
                self.push(&mut state, UiEventKind::Status, Some(id), json!({"timed_out": true, "decision": "deny"}));
                None
            }
        }
    }

    pub fn answer(&self, correlation_id: &str, answer: Answer) -> Result<(), AnswerError> {
        let mut state = self.lock();
        let pending = state.pending.get(correlation_id).ok_or_else(|| AnswerError::NotFound(correlation_id.to_string()))?;
        let invalid = |m: String| Err(AnswerError::Invalid(m));
        match (&pending.accepts, &answer) {
            (Accepts::Permission(options), Answer::Permission(o)) => {
                if !options.contains(o) {
                    return invalid(format!("{o:?} is not offered for this request"));
                }
            }
            (Accepts::DataConsent(items), Answer::DataConsent(approved)) => {
                if let Some(bad) = approved.iter().find(|a| !items.contains(a)) {
                    return invalid(format!("{bad} is not an item of this request"));
                }
            }
            (Accepts::AppChoice(candidates, options), Answer::AppChoice(choice)) => {
                if let Some((app, o)) = choice {
                    if !candidates.contains(app) {
                        return invalid(format!("{app} is not a candidate"));
                    }
                    if !options.contains(o) {
                        return invalid(format!("{o:?} is not offered for this choice"));
                    }
                }
            }
            (Accepts::UserData, Answer::UserData(_)) => {}
            _ => return invalid("answer does not match the request kind".into()),
        }
        let pending = state.pending.remove(correlation_id).expect("checked above");
        // The asker may have timed out between the lookup and now; the
        // answer is then dropped and the timeout's deny stands.
        let _ = pending.reply.send(answer);
        self.push(&mut state, UiEventKind::Status, Some(correlation_id.to_string()), json!({"answered": true}));
        Ok(())
    }
}

/// The hub's user, reached through the event stream.
pub struct GatewayUser {
    broker: Arc<Broker>,
}

impl GatewayUser {
    pub fn new(broker: Arc<Broker>) -> Self {
        GatewayUser { broker }
    }
}

impl User for GatewayUser {
    fn permission(&mut self, request: &PromptRequest) -> PromptOption {
        let payload = json!({
            "scope": request.scope,
            "human_text": request.human_text,
            "assessment": request.assessment,
            "options": request.options,
            "irreversible": request.scope.irreversible,
        });
        match self.broker.ask(UiEventKind::PermissionRequest, Accepts::Permission(request.options.clone()), payload) {
            Some(Answer::Permission(o)) => o,
            _ => PromptOption::Deny,
        }
    }

    fn choose_app(&mut self, request: &AppChoiceRequest) -> Option<(String, PromptOption)> {
        let accepts = Accepts::AppChoice(request.candidates.clone(), request.options.clone());
        match self.broker.ask(UiEventKind::AppChoiceRequest, accepts, json!(request)) {
            Some(Answer::AppChoice(choice)) => choice,
            _ => None,
        }
    }

    fn data_consent(&mut self, request: &DataConsentRequest) -> Vec<String> {
        let items = request.items.iter().map(|i| i.entity.clone()).collect();
        match self.broker.ask(UiEventKind::DataConsentRequest, Accepts::DataConsent(items), json!(request)) {
            Some(Answer::DataConsent(approved)) => approved,
            _ => Vec::new(),
        }
    }

    fn provide_data(&mut self, request: &UserDataRequest) -> Option<String> {
        match self.broker.ask(UiEventKind::UserDataRequest, Accepts::UserData, json!(request)) {
            Some(Answer::UserData(v)) => v,
            _ => None,
        }
    }

    fn notify(&mut self, event: UiEvent) {
        self.broker.emit(event.kind, event.correlation_id, event.payload);
    }
}
