use hubspoke::config::HubConfig;
use hubspoke::hub::{Dispatch, Hub, HubState, ScriptedUser, Verdict};
use hubspoke::permission::{GrantDuration, PermissionKind, PermissionScope, PromptOption};
use hubspoke::trace::{ConsentKind, ConsentVia};

fn config(apps: &[&str]) -> HubConfig {
    let mut c = HubConfig::default().with_installed(apps);
    c.spoke_bin = Some(env!("CARGO_BIN_EXE_hubspoke-spoke").into());
    c
}

fn hub(apps: &[&str], user: ScriptedUser) -> Hub {
    Hub::new(config(apps), Box::new(user)).expect("hub starts")
}

#[test]
fn vanilla_query_spawns_no_app_spoke() {
    let mut h = hub(&["metro_hail", "gmail_like"], ScriptedUser::approving());
    let r = h.handle_user_query("what is the capital of France?").unwrap();
    assert!(!r.plan.needs_app);
    assert!(r.text.contains("Paris"), "{}", r.text);
    assert!(h.spoke("metro_hail").is_none() && h.spoke("gmail_like").is_none());
    let vanilla: Vec<_> = h.spokes().map(|s| s.app_id.clone()).collect();
    assert_eq!(vanilla, vec!["vanilla"]);
    for p in h.trace().prompts.iter().filter(|p| p.principal == "vanilla") {
        assert!(!p.text.contains("Metro Hail") && !p.text.contains("Description:"));
    }
    assert_eq!(h.state(), HubState::Idle);
}

#[test]
fn relational_lookup_runs_two_tools() {
    let mut h = hub(&["rel_users"], ScriptedUser::approving());
    let r = h.handle_user_query("what is alice's email address?").unwrap();
    assert_eq!(h.trace().tools_for_query(0), vec!["find_users_by_name", "get_user_email"]);
    assert!(r.text.contains("alice@gmail.com"), "{}", r.text);
}

#[test]
fn typewriter_types_each_letter() {
    let mut h = hub(&["typewriter"], ScriptedUser::approving());
    let r = h.handle_user_query("type 'abc'").unwrap();
    assert_eq!(h.trace().tools_for_query(0), vec!["type_letter"; 3]);
    assert_eq!(r.text, "abc");
}

#[test]
fn fare_comparison_recommends_lower_fare() {
    let mut h = hub(&["metro_hail", "quick_ride"], ScriptedUser::approving());
    let r = h.handle_user_query("book the cheapest ride from downtown to the airport").unwrap();
    assert_eq!(r.plan.primary_apps, vec!["metro_hail", "quick_ride"]);
    assert_eq!(r.plan.dispatch, Dispatch::Compare);
    // Raw tool values: metro 25.00, quick 28.00; quick_ride's note only
    // affects what quick_ride itself reports.
    assert!(r.text.contains("Metro Hail: $25.00"), "{}", r.text);
    assert!(r.text.contains("Cheapest: Metro Hail"), "{}", r.text);
}

#[test]
fn same_spoke_is_reused_within_a_session_and_sids_differ_across_apps() {
    let mut h = hub(&["rel_users", "typewriter"], ScriptedUser::approving());
    h.handle_user_query("what is alice's email address?").unwrap();
    let sid = h.spoke("rel_users").unwrap().sid.clone();
    let pid = h.spoke("rel_users").unwrap().pid();
    h.handle_user_query("what is bob's email address?").unwrap();
    assert_eq!(h.spoke("rel_users").unwrap().sid, sid);
    assert_eq!(h.spoke("rel_users").unwrap().pid(), pid);
    h.handle_user_query("type 'x'").unwrap();
    assert_ne!(h.spoke("typewriter").unwrap().sid, sid);
    for s in h.spokes() {
        assert_ne!(s.sid.as_str(), s.app_id);
    }
    assert!(h.channel_topology().iter().all(|(a, _)| a == "hub"));
}

#[test]
fn collaboration_flow_sends_the_report() {
    let mut h = hub(&["gmail_like", "gdrive_like"], ScriptedUser::approving());
    let r = h.handle_user_query("send the quarterly report to Bob").unwrap();
    assert_eq!(r.plan.primary_apps, vec!["gmail_like"]);
    assert!(r.plan.secondary_apps.contains(&"gdrive_like".to_string()));
    let tools = h.trace().tools_for_query(0);
    assert!(tools.contains(&"get_file".to_string()), "{tools:?}");
    assert!(tools.contains(&"send_email".to_string()), "{tools:?}");
    let consents = &h.trace().consents;
    assert!(consents.iter().any(|c| c.kind == ConsentKind::Collaboration && c.approved && c.via == ConsentVia::Prompt));
    assert!(consents.iter().any(|c| c.kind == ConsentKind::Irreversible && c.approved && c.detail.contains("send_email")));
    let probe = h.audit().events("isc_probe").last().unwrap().detail.clone();
    assert_eq!(probe["assessment"], serde_json::json!(Verdict::Expected));
}

#[test]
fn declined_send_is_not_executed() {
    let user = ScriptedUser::approving().irreversible(PromptOption::Deny);
    let mut h = hub(&["gmail_like", "gdrive_like"], user);
    let r = h.handle_user_query("send the quarterly report to Bob").unwrap();
    assert!(!h.trace().tools_for_query(0).contains(&"send_email".to_string()));
    assert!(!r.text.is_empty());
}

#[test]
fn app_choice_one_time_prompts_again_and_session_does_not() {
    let user = ScriptedUser::approving().choose("quick_ride", PromptOption::AllowOnce);
    let mut h = hub(&["metro_hail", "quick_ride"], user);
    let r = h.handle_user_query("get me a ride to the airport").unwrap();
    assert_eq!(r.apps, vec!["quick_ride"]);
    h.handle_user_query("get me a ride to the airport").unwrap();
    let prompts = |h: &Hub| h.trace().consents.iter().filter(|c| c.kind == ConsentKind::AppSelection && c.via == ConsentVia::Prompt).count();
    assert_eq!(prompts(&h), 2);

    let user = ScriptedUser::approving().choose("metro_hail", PromptOption::AllowSession);
    let mut h = hub(&["metro_hail", "quick_ride"], user);
    h.handle_user_query("get me a ride to the airport").unwrap();
    let r = h.handle_user_query("get me a ride to the airport").unwrap();
    assert_eq!(r.apps, vec!["metro_hail"]);
    assert_eq!(prompts(&h), 1);
}

#[test]
fn permanent_app_selection_grant_skips_the_prompt() {
    let mut h = hub(&["metro_hail", "quick_ride"], ScriptedUser::denying());
    h.permissions().lock().unwrap().grant(PermissionScope::app_selection("metro_hail"), GrantDuration::Permanent).unwrap();
    let r = h.handle_user_query("get me a ride to the airport").unwrap();
    assert_eq!(r.apps, vec!["metro_hail"]);
    assert!(!r.declined);
}

#[test]
fn declining_the_choice_returns_a_refusal() {
    let mut h = hub(&["metro_hail", "quick_ride"], ScriptedUser::denying());
    let r = h.handle_user_query("get me a ride to the airport").unwrap();
    assert!(r.declined);
    assert!(h.spoke("metro_hail").is_none() && h.spoke("quick_ride").is_none());
}

#[test]
fn bootstrap_consent_and_manual_entry() {
    let user = ScriptedUser::approving()
        .share_data(false)
        .on(PermissionKind::DataSharing, PromptOption::Deny)
        .provide("passport_number", "X999");
    let mut h = hub(&["health_companion", "travel_mate"], user);
    h.handle_user_query("My symptoms are fever and cough. My passport number is P1234567.").unwrap();
    let stored: Vec<_> = h.memory().entities().into_iter().map(|p| (p.entity, p.attribution)).collect();
    assert!(stored.contains(&("passport_number".into(), "health_companion".into())), "{stored:?}");
    h.handle_user_query("Find flights for my trip to Paris.").unwrap();
    let travel: Vec<_> = h.trace().prompts.iter().filter(|p| p.principal == "travel_mate").collect();
    assert!(!travel.is_empty());
    assert!(travel.iter().all(|p| !p.text.contains("P1234567") && !p.text.contains("fever")));
    assert!(travel.iter().any(|p| p.text.contains("X999")));
    assert_eq!(h.trace().manual_data.len(), 1);
}

#[test]
fn private_query_has_no_memory_context() {
    let mut h = hub(&["rel_users"], ScriptedUser::approving());
    h.handle_user_query("what is alice's email address?").unwrap();
    h.handle_private_query("what is bob's email address?").unwrap();
    let private_prompts: Vec<_> = h.trace().prompts.iter().filter(|p| p.query == 1).collect();
    assert!(private_prompts.iter().all(|p| !p.text.contains("alice")));
    assert!(h.memory().records().iter().filter(|r| r.private).count() == 2);
}

#[test]
fn unparsable_plans_fail_after_one_reprompt() {
    let mut h = hub(&["rel_users"], ScriptedUser::approving());
    let r = h.handle_user_query("[garbled] what is alice's email address?").unwrap();
    assert!(r.plan.needs_app);
    let err = h.handle_user_query("[garbled-always] hi").unwrap_err();
    assert!(matches!(err, hubspoke::hub::HubError::PlanningFailure));
    assert_eq!(h.state(), HubState::Idle);
}

#[test]
fn transitions_are_audited() {
    let mut h = hub(&["rel_users"], ScriptedUser::approving());
    h.handle_user_query("what is alice's email address?").unwrap();
    let states: Vec<String> =
        h.audit().events("transition").map(|r| r.detail["to"].as_str().unwrap().to_string()).collect();
    assert_eq!(states, vec!["planning", "app_selection", "data_consent", "spoke_running", "responding", "idle"]);
}

#[test]
fn session_end_stops_spokes_and_clears_session_grants() {
    let mut h = hub(&["metro_hail", "quick_ride"], ScriptedUser::approving());
    h.handle_user_query("get me a ride to the airport").unwrap();
    assert!(!h.permissions().lock().unwrap().grants().is_empty());
    h.end_session();
    assert_eq!(h.spokes().count(), 0);
    assert!(h.permissions().lock().unwrap().grants().is_empty());
}
