mod common;

use common::perm_model::{enumerate, Event, Real, Reference, ALPHABET};
use hubspoke::permission::{CheckResult, GrantDuration, PermissionManager, PermissionScope, PromptOption, PromptRequest};
use proptest::prelude::*;

#[test]
fn exhaustive_sequences_match_the_reference() {
    let e = enumerate(6);
    // 6^0 + ... + 6^6 sequences per scope kind.
    assert_eq!(e.sequences, 2 * 55_987);
    assert!(e.mismatches.is_empty(), "{} mismatches, first: {:?}", e.mismatches.len(), e.mismatches.first());
    assert!(e.ban_attempts > 0);
    assert_eq!(e.ban_attempts, e.ban_rejections);
    assert_eq!(e.irreversible_allows, 0);
}

#[test]
fn irreversible_prompt_never_offers_always() {
    for irreversible in [false, true] {
        let p = PromptRequest::new(PermissionScope::data_egress("gmail_like", "send_email", irreversible), "send", None);
        assert_eq!(p.options.contains(&PromptOption::AllowAlways), !irreversible);
        assert!(p.options.contains(&PromptOption::Deny));
    }
}

#[test]
fn one_time_grant_first_use_allows_then_prompts() {
    let mut r = Real::new(false);
    r.step(Event::Grant(GrantDuration::OneTime));
    assert_eq!(r.mgr.check(&r.scope), CheckResult::Allow);
    assert!(r.mgr.use_grant(&r.scope));
    assert_eq!(r.mgr.check(&r.scope), CheckResult::DenyPromptNeeded);
}

#[test]
fn revoke_mid_session_takes_effect_on_next_check() {
    let mut m = PermissionManager::in_memory();
    m.begin_session("s");
    let scope = PermissionScope::collaboration("gmail_like", "gdrive_like");
    m.grant(scope.clone(), GrantDuration::Session).unwrap();
    assert_eq!(m.check(&scope), CheckResult::Allow);
    assert!(m.revoke(&scope));
    assert_eq!(m.check(&scope), CheckResult::DenyPromptNeeded);
    assert!(!m.revoke(&scope));
}

#[test]
fn grants_match_subjects_exactly() {
    let mut m = PermissionManager::in_memory();
    m.begin_session("s");
    m.grant(PermissionScope::collaboration("gmail_like", "gdrive_like"), GrantDuration::Permanent).unwrap();
    assert_eq!(m.check(&PermissionScope::collaboration("gdrive_like", "gmail_like")), CheckResult::DenyPromptNeeded);
    assert_eq!(m.check(&PermissionScope::app_selection("gmail_like")), CheckResult::DenyPromptNeeded);
}

fn event() -> impl Strategy<Value = Event> {
    (0..ALPHABET.len()).prop_map(|i| ALPHABET[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    /// After a session close the live grants are exactly the permanent ones.
    #[test]
    fn expiry_soundness(seq in proptest::collection::vec(event(), 0..12), irreversible in any::<bool>()) {
        let mut reference = Reference { irreversible, grants: Vec::new() };
        let mut real = Real::new(irreversible);
        for e in &seq {
            prop_assert_eq!(reference.step(*e), real.step(*e));
        }
        real.step(Event::SessionClose);
        prop_assert!(real.mgr.grants().iter().all(|g| g.duration == GrantDuration::Permanent));
        let permanent_granted = seq.iter().filter(|e| **e == Event::Grant(GrantDuration::Permanent)).count();
        if irreversible || permanent_granted == 0 {
            prop_assert!(real.mgr.grants().is_empty());
        }
    }
}
