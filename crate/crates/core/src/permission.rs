//! User consent: records, checks and expires grants for the four moderated
//! action scopes (app selection, spoke collaboration, data sharing, data egress).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermissionKind {
    AppSelection,
    SpokeCollaboration,
    DataSharing,
    DataEgress,
}

impl PermissionKind {
    pub fn arity(self) -> usize {
        match self {
            PermissionKind::AppSelection => 1,
            _ => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PermissionKind::AppSelection => "app_selection",
            PermissionKind::SpokeCollaboration => "spoke_collaboration",
            PermissionKind::DataSharing => "data_sharing",
            PermissionKind::DataEgress => "data_egress",
        }
    }
}

/// What a grant covers. Subjects match exactly; there are no wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PermissionScope {
    pub kind: PermissionKind,
    pub subjects: Vec<String>,
    #[serde(default)]
    pub irreversible: bool,
}

impl PermissionScope {
    pub fn app_selection(app: &str) -> Self {
        Self::new(PermissionKind::AppSelection, &[app], false)
    }

    pub fn collaboration(requester: &str, provider: &str) -> Self {
        Self::new(PermissionKind::SpokeCollaboration, &[requester, provider], false)
    }

    pub fn data_sharing(app: &str, entity: &str) -> Self {
        Self::new(PermissionKind::DataSharing, &[app, entity], false)
    }

    /// Outbound data from `app` to `target` (a domain or an irreversible tool).
    pub fn data_egress(app: &str, target: &str, irreversible: bool) -> Self {
        Self::new(PermissionKind::DataEgress, &[app, target], irreversible)
    }

    fn new(kind: PermissionKind, subjects: &[&str], irreversible: bool) -> Self {
        PermissionScope { kind, subjects: subjects.iter().map(|s| s.to_string()).collect(), irreversible }
    }

    /// Key used for persistence and exact matching.
    pub fn canonical(&self) -> String {
        let mut key = format!("{}:{}", self.kind.as_str(), self.subjects.join("|"));
        if self.irreversible {
            key.push_str("!irreversible");
        }
        key
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantDuration {
    Permanent,
    Session,
    OneTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionGrant {
    pub id: u64,
    pub scope: PermissionScope,
    pub duration: GrantDuration,
    /// Logical clock value at grant time.
    pub granted_at: u64,
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckResult {
    Allow,
    DenyPromptNeeded,
}

#[derive(Debug, thiserror::Error)]
pub enum PermissionError {
    #[error("permanent grants are not allowed for irreversible actions")]
    IrreversiblePermanentBan,
    #[error("{kind:?} scopes take {expected} subjects, got {found}")]
    Arity { kind: PermissionKind, expected: usize, found: usize },
    #[error("session grant requested outside a session")]
    NoSession,
    #[error("grant store: {0}")]
    Store(#[from] io::Error),
    #[error("grant import: {0}")]
    Import(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOption {
    AllowOnce,
    AllowSession,
    AllowAlways,
    Deny,
}

impl PromptOption {
    pub fn duration(self) -> Option<GrantDuration> {
        match self {
            PromptOption::AllowOnce => Some(GrantDuration::OneTime),
            PromptOption::AllowSession => Some(GrantDuration::Session),
            PromptOption::AllowAlways => Some(GrantDuration::Permanent),
            PromptOption::Deny => None,
        }
    }
}

/// A consent dialog: what is asked, the hub's assessment, and the choices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub scope: PermissionScope,
    pub human_text: String,
    pub assessment: Option<String>,
    pub options: Vec<PromptOption>,
}

impl PromptRequest {
    pub fn new(scope: PermissionScope, human_text: impl Into<String>, assessment: Option<String>) -> Self {
        let options = if scope.irreversible {
            vec![PromptOption::AllowOnce, PromptOption::AllowSession, PromptOption::Deny]
        } else {
            vec![PromptOption::AllowOnce, PromptOption::AllowSession, PromptOption::AllowAlways, PromptOption::Deny]
        };
        PromptRequest { scope, human_text: human_text.into(), assessment, options }
    }
}

#[derive(Debug, Default)]
pub struct PermissionManager {
    grants: BTreeMap<u64, PermissionGrant>,
    next_id: u64,
    clock: u64,
    session: Option<String>,
    store: Option<PathBuf>,
}

impl PermissionManager {
    pub fn in_memory() -> Self {
        Self { next_id: 1, ..Default::default() }
    }

    /// Opens the persistent grant store, loading permanent grants.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PermissionError> {
        let path = path.as_ref().to_path_buf();
        let mut mgr = Self::in_memory();
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let grants: Vec<PermissionGrant> = serde_json::from_str(&text)?;
            for g in grants.into_iter().filter(|g| g.duration == GrantDuration::Permanent) {
                mgr.next_id = mgr.next_id.max(g.id + 1);
                mgr.clock = mgr.clock.max(g.granted_at);
                mgr.grants.insert(g.id, g);
            }
        }
        mgr.store = Some(path);
        Ok(mgr)
    }

    pub fn begin_session(&mut self, session_id: &str) {
        self.end_session();
        self.session = Some(session_id.to_string());
    }

    /// Drops every grant that is not permanent.
    pub fn end_session(&mut self) {
        self.grants.retain(|_, g| g.duration == GrantDuration::Permanent);
        self.session = None;
    }

    pub fn session(&self) -> Option<&str> {
        self.session.as_deref()
    }

    fn covering(&self, scope: &PermissionScope) -> impl Iterator<Item = &PermissionGrant> {
        let key = scope.canonical();
        self.grants.values().filter(move |g| g.scope.canonical() == key)
    }

    /// Irreversible scopes always need a prompt; checking never consumes.
    pub fn check(&self, scope: &PermissionScope) -> CheckResult {
        if scope.irreversible || self.covering(scope).next().is_none() {
            CheckResult::DenyPromptNeeded
        } else {
            CheckResult::Allow
        }
    }

    pub fn grant(&mut self, scope: PermissionScope, duration: GrantDuration) -> Result<PermissionGrant, PermissionError> {
        let expected = scope.kind.arity();
        if scope.subjects.len() != expected {
            return Err(PermissionError::Arity { kind: scope.kind, expected, found: scope.subjects.len() });
        }
        if duration == GrantDuration::Permanent && scope.irreversible {
            return Err(PermissionError::IrreversiblePermanentBan);
        }
        let session_id = match duration {
            GrantDuration::Permanent => None,
            _ => Some(self.session.clone().ok_or(PermissionError::NoSession)?),
        };
        self.clock += 1;
        let grant = PermissionGrant { id: self.next_id, scope, duration, granted_at: self.clock, session_id };
        self.next_id += 1;
        self.grants.insert(grant.id, grant.clone());
        if duration == GrantDuration::Permanent {
            self.persist()?;
        }
        Ok(grant)
    }

    /// Uses a covering grant for one action. Permanent and session grants are
    /// preferred; a one-time grant is deleted by its first use.
    pub fn use_grant(&mut self, scope: &PermissionScope) -> bool {
        if scope.irreversible {
            return false;
        }
        let mut one_time = None;
        for g in self.covering(scope) {
            if g.duration != GrantDuration::OneTime {
                return true;
            }
            one_time.get_or_insert(g.id);
        }
        match one_time {
            Some(id) => {
                self.grants.remove(&id);
                true
            }
            None => false,
        }
    }

    pub fn revoke(&mut self, scope: &PermissionScope) -> bool {
        let key = scope.canonical();
        let before = self.grants.len();
        self.grants.retain(|_, g| g.scope.canonical() != key);
        let removed = self.grants.len() != before;
        if removed {
            if let Err(err) = self.persist() {
                log::warn!("could not persist revocation: {err}");
            }
        }
        removed
    }

    pub fn revoke_id(&mut self, id: u64) -> bool {
        match self.grants.remove(&id) {
            Some(g) => {
                if g.duration == GrantDuration::Permanent {
                    if let Err(err) = self.persist() {
                        log::warn!("could not persist revocation: {err}");
                    }
                }
                true
            }
            None => false,
        }
    }

    pub fn grants(&self) -> Vec<PermissionGrant> {
        self.grants.values().cloned().collect()
    }

    /// Structured text for the console's grants panel.
    pub fn export(&self) -> String {
        serde_json::to_string_pretty(&self.grants()).expect("grants serialize")
    }

    /// Imports permanent grants from exported text; others are ignored.
    pub fn import(&mut self, text: &str) -> Result<usize, PermissionError> {
        let grants: Vec<PermissionGrant> = serde_json::from_str(text)?;
        let mut n = 0;
        for g in grants.into_iter().filter(|g| g.duration == GrantDuration::Permanent) {
            self.grant(g.scope, GrantDuration::Permanent)?;
            n += 1;
        }
        Ok(n)
    }

    fn persist(&self) -> Result<(), PermissionError> {
        let Some(path) = &self.store else { return Ok(()) };
        let permanent: Vec<_> =
            self.grants.values().filter(|g| g.duration == GrantDuration::Permanent).collect();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&permanent)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}
