//! Reference state machine for one permission scope, and an exhaustive
//! comparison against the real manager.

use hubspoke::permission::{CheckResult, GrantDuration, PermissionError, PermissionManager, PermissionScope};

pub const DURATIONS: [GrantDuration; 3] = [GrantDuration::Permanent, GrantDuration::Session, GrantDuration::OneTime];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Grant(GrantDuration),
    Use,
    SessionClose,
    Revoke,
}

pub const ALPHABET: [Event; 6] = [
    Event::Grant(GrantDuration::Permanent),
    Event::Grant(GrantDuration::Session),
    Event::Grant(GrantDuration::OneTime),
    Event::Use,
    Event::SessionClose,
    Event::Revoke,
];

/// Observable outcome of one event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Granted,
    Banned,
    Used(bool),
    Closed,
    Revoked(bool),
}

/// Live grants as a plain list of durations.
#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub irreversible: bool,
    pub grants: Vec<GrantDuration>,
}

impl Reference {
    pub fn step(&mut self, e: Event) -> Outcome {
        match e {
            Event::Grant(d) => {
                if self.irreversible && d == GrantDuration::Permanent {
                    return Outcome::Banned;
                }
                self.grants.push(d);
                Outcome::Granted
            }
            Event::Use => {
                if self.irreversible {
                    return Outcome::Used(false);
                }
                if self.grants.iter().any(|d| *d != GrantDuration::OneTime) {
                    return Outcome::Used(true);
                }
                match self.grants.iter().position(|d| *d == GrantDuration::OneTime) {
                    Some(i) => {
                        self.grants.remove(i);
                        Outcome::Used(true)
                    }
                    None => Outcome::Used(false),
                }
            }
            Event::SessionClose => {
                self.grants.retain(|d| *d == GrantDuration::Permanent);
                Outcome::Closed
            }
            Event::Revoke => {
                let had = !self.grants.is_empty();
                self.grants.clear();
                Outcome::Revoked(had)
            }
        }
    }

    pub fn check(&self) -> CheckResult {
        if self.irreversible || self.grants.is_empty() {
            CheckResult::DenyPromptNeeded
        } else {
            CheckResult::Allow
        }
    }

    pub fn durations(&self) -> Vec<GrantDuration> {
        let mut v = self.grants.clone();
        v.sort_by_key(|d| *d as u8);
        v
    }
}

pub struct Real {
    pub mgr: PermissionManager,
    pub scope: PermissionScope,
    sessions: u64,
}

impl Real {
    pub fn new(irreversible: bool) -> Self {
        let mut mgr = PermissionManager::in_memory();
        mgr.begin_session("s0");
        Real { mgr, scope: PermissionScope::data_egress("gmail_like", "send_email", irreversible), sessions: 0 }
    }

    pub fn step(&mut self, e: Event) -> Outcome {
        match e {
            Event::Grant(d) => match self.mgr.grant(self.scope.clone(), d) {
                Ok(_) => Outcome::Granted,
                Err(PermissionError::IrreversiblePermanentBan) => Outcome::Banned,
                Err(other) => panic!("unexpected grant error {other}"),
            },
            Event::Use => Outcome::Used(self.mgr.use_grant(&self.scope)),
            Event::SessionClose => {
                self.mgr.end_session();
                self.sessions += 1;
                self.mgr.begin_session(&format!("s{}", self.sessions));
                Outcome::Closed
            }
            Event::Revoke => Outcome::Revoked(self.mgr.revoke(&self.scope)),
        }
    }

    pub fn durations(&self) -> Vec<GrantDuration> {
        let mut v: Vec<GrantDuration> = self.mgr.grants().iter().map(|g| g.duration).collect();
        v.sort_by_key(|d| *d as u8);
        v
    }
}

#[derive(Debug, Default)]
pub struct Enumeration {
    pub sequences: usize,
    pub steps: usize,
    pub mismatches: Vec<String>,
    pub ban_attempts: usize,
    pub ban_rejections: usize,
    pub irreversible_allows: usize,
}

/// Every event sequence up to `depth`, for both a reversible and an
/// irreversible scope, compared step by step.
pub fn enumerate(depth: u32) -> Enumeration {
    let mut out = Enumeration::default();
    for irreversible in [false, true] {
        for len in 0..=depth {
            let total = ALPHABET.len().pow(len);
            for code in 0..total {
                let mut seq = Vec::with_capacity(len as usize);
                let mut c = code;
                for _ in 0..len {
                    seq.push(ALPHABET[c % ALPHABET.len()]);
                    c /= ALPHABET.len();
                }
                compare(&seq, irreversible, &mut out);
            }
        }
    }
    out
}

fn compare(seq: &[Event], irreversible: bool, out: &mut Enumeration) {
    out.sequences += 1;
    let mut reference = Reference { irreversible, grants: Vec::new() };
    let mut real = Real::new(irreversible);
    for (i, e) in seq.iter().enumerate() {
        out.steps += 1;
        let (want, got) = (reference.step(*e), real.step(*e));
        if irreversible && *e == Event::Grant(GrantDuration::Permanent) {
            out.ban_attempts += 1;
            if got == Outcome::Banned {
                out.ban_rejections += 1;
            }
        }
        let (want_check, got_check) = (reference.check(), real.mgr.check(&real.scope));
        if irreversible && got_check == CheckResult::Allow {
            out.irreversible_allows += 1;
        }
        if want != got || want_check != got_check || reference.durations() != real.durations() {
            if out.mismatches.len() < 5 {
                out.mismatches.push(format!(
                    "irreversible={irreversible} {seq:?} step {i}: want {want:?}/{want_check:?}/{:?}, got {got:?}/{got_check:?}/{:?}",
                    reference.durations(),
                    real.durations()
                ));
            } else {
                out.mismatches.push(String::new());
            }
            return;
        }
    }
}
