//! The human side of the hub: consent dialogs, app choices and data entry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::permission::{PermissionKind, PromptOption, PromptRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppChoiceRequest {
    pub query: String,
    pub candidates: Vec<String>,
    pub options: Vec<PromptOption>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentItem {
    pub entity: String,
    pub value: String,
    pub source_app: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataConsentRequest {
    pub app: String,
    pub items: Vec<ConsentItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDataRequest {
    pub app: String,
    pub entity: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UiEventKind {
    AssistantMessage,
    PermissionRequest,
    DataConsentRequest,
    AppChoiceRequest,
    UserDataRequest,
    Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiEvent {
    pub seq: u64,
    pub kind: UiEventKind,
    pub correlation_id: Option<String>,
    pub payload: Value,
}

pub trait User: Send {
    fn permission(&mut self, request: &PromptRequest) -> PromptOption;

    /// The chosen app and how long the choice stands, or `None` to decline.
    fn choose_app(&mut self, request: &AppChoiceRequest) -> Option<(String, PromptOption)>;

    /// Entity names approved for sharing.
    fn data_consent(&mut self, request: &DataConsentRequest) -> Vec<String>;

    fn provide_data(&mut self, request: &UserDataRequest) -> Option<String>;

    fn notify(&mut self, event: UiEvent);
}

/// A decision table standing in for the user in tests and benchmarks.
#[derive(Debug, Clone)]
pub struct ScriptedUser {
    default: PromptOption,
    by_kind: BTreeMap<PermissionKind, PromptOption>,
    irreversible: Option<PromptOption>,
    choice: Option<String>,
    choice_option: PromptOption,
    share_data: bool,
    provided: BTreeMap<String, String>,
    events: Vec<UiEvent>,
}

impl ScriptedUser {
    /// Approves everything for the session and picks the first candidate.
    pub fn approving() -> Self {
        ScriptedUser {
            default: PromptOption::AllowSession,
            by_kind: BTreeMap::new(),
            irreversible: None,
            choice: None,
            choice_option: PromptOption::AllowSession,
            share_data: true,
            provided: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    /// Denies every prompt, declines every choice and supplies no data.
    pub fn denying() -> Self {
        ScriptedUser { default: PromptOption::Deny, choice_option: PromptOption::Deny, share_data: false, ..Self::approving() }
    }

    pub fn on(mut self, kind: PermissionKind, answer: PromptOption) -> Self {
        self.by_kind.insert(kind, answer);
        self
    }

    pub fn irreversible(mut self, answer: PromptOption) -> Self {
        self.irreversible = Some(answer);
        self
    }

    pub fn choose(mut self, app: &str, answer: PromptOption) -> Self {
        self.choice = Some(app.to_string());
        self.choice_option = answer;
        self
    }

    pub fn share_data(mut self, share: bool) -> Self {
        self.share_data = share;
        self
    }

    pub fn provide(mut self, entity: &str, value: &str) -> Self {
        self.provided.insert(entity.to_string(), value.to_string());
        self
    }

    pub fn events(&self) -> &[UiEvent] {
        &self.events
    }
}

impl User for ScriptedUser {
    fn permission(&mut self, request: &PromptRequest) -> PromptOption {
        if request.scope.irreversible {
            if let Some(answer) = self.irreversible {
                return answer;
            }
        }
        self.by_kind.get(&request.scope.kind).copied().unwrap_or(self.default)
    }

    fn choose_app(&mut self, request: &AppChoiceRequest) -> Option<(String, PromptOption)> {
        if self.choice_option == PromptOption::Deny {
            return None;
        }
        let pick = match &self.choice {
            Some(app) if request.candidates.contains(app) => app.clone(),
            _ => request.candidates.first()?.clone(),
        };
        Some((pick, self.choice_option))
    }

    fn data_consent(&mut self, request: &DataConsentRequest) -> Vec<String> {
        if self.share_data {
            request.items.iter().map(|i| i.entity.clone()).collect()
        } else {
            Vec::new()
        }
    }

    fn provide_data(&mut self, request: &UserDataRequest) -> Option<String> {
        self.provided.get(&request.entity).cloned()
    }

    fn notify(&mut self, event: UiEvent) {
        self.events.push(event);
    }
}
