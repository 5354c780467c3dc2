#![allow(dead_code)]

pub mod isc_fuzz;
pub mod perm_model;
pub mod psl_oracle;
pub mod triad;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use hubspoke::hub::{AppChoiceRequest, DataConsentRequest, ScriptedUser, UiEvent, User, UserDataRequest};
use hubspoke::permission::{PromptOption, PromptRequest};

/// Counts every question put to the user; answers like the wrapped table.
pub struct CountingUser {
    inner: ScriptedUser,
    pub asked: Arc<AtomicUsize>,
}

impl CountingUser {
    pub fn new(inner: ScriptedUser) -> (Self, Arc<AtomicUsize>) {
        let asked = Arc::new(AtomicUsize::new(0));
        (CountingUser { inner, asked: asked.clone() }, asked)
    }

    fn tick(&self) {
        self.asked.fetch_add(1, Ordering::SeqCst);
    }
}

impl User for CountingUser {
    fn permission(&mut self, request: &PromptRequest) -> PromptOption {
        self.tick();
        self.inner.permission(request)
    }

    fn choose_app(&mut self, request: &AppChoiceRequest) -> Option<(String, PromptOption)> {
        self.tick();
        self.inner.choose_app(request)
    }

    fn data_consent(&mut self, request: &DataConsentRequest) -> Vec<String> {
        self.tick();
        self.inner.data_consent(request)
    }

    fn provide_data(&mut self, request: &UserDataRequest) -> Option<String> {
        self.tick();
        self.inner.provide_data(request)
    }

    fn notify(&mut self, event: UiEvent) {
        self.inner.notify(event);
    }
}
