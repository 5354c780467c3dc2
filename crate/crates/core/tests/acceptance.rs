//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines are always printed; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::isc_fuzz::{deliver_note, fixture_hub, negotiate, run_corpus};
use common::perm_model::enumerate;
use common::psl_oracle::{load_rules, oracle_etld1, HOSTS};
use hubspoke::apps::builtin_suite;
use hubspoke::harness::{render_overhead, run_all, run_attack, run_benchmark, AttackCase, HarnessConfig, Mode, Suite};
use hubspoke::isc::{FailureCode, Payload, DEFAULT_STRING_LIMIT};
use hubspoke::permission::{CheckResult, PermissionScope, PromptOption, PromptRequest};
use hubspoke::sandbox::{etld_plus_one, BlockReason, EgressDecision, EgressGuard};
use serde_json::Value;

const SEED: u64 = 7;

fn harness_config() -> HarnessConfig {
    let mut c = HarnessConfig::new(SEED);
    c.spoke_bin = Some(env!("CARGO_BIN_EXE_hubspoke-spoke").into());
    c
}

fn fixture(name: &str) -> Value {
    let path = format!("{}/apps/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(failures: Vec<String>, summary: String) -> Verdict {
    if failures.is_empty() {
        Verdict { pass: true, detail: summary }
    } else {
        Verdict { pass: false, detail: format!("{summary}; {}", failures.join("; ")) }
    }
}

fn attack_asymmetry(cfg: &HarnessConfig) -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut asymmetric = 0;
    let raw = fixture("services.json")["fares"]["metro_fare"]["fare"].as_str().unwrap().to_string();
    let raw_cents: i64 = raw.replace('.', "").parse().unwrap();
    let skewed = format!("{}.{:02}", (raw_cents + 1000) / 100, (raw_cents + 1000) % 100);
    let mut fares = BTreeMap::new();
    for case in AttackCase::ALL {
        let shared = run_attack(case, Mode::Shared, cfg);
        let isolated = run_attack(case, Mode::Isolated, cfg);
        if shared.attack_succeeded && !isolated.attack_succeeded {
            asymmetric += 1;
        } else {
            failures.push(format!("{}: shared={} isolated={}", case.name(), shared.attack_succeeded, isolated.attack_succeeded));
        }
        if case == AttackCase::Cs1 {
            let reported = |v: &hubspoke::harness::AttackVerdict| v.fare.as_ref().and_then(|f| f.reported.clone());
            let (iso, sh) = (reported(&isolated), reported(&shared));
            if iso.as_deref() != Some(raw.as_str()) {
                failures.push(format!("cs1 isolated reports {iso:?}, raw is {raw}"));
            }
            if sh.as_deref() != Some(skewed.as_str()) {
                failures.push(format!("cs1 shared reports {sh:?}, expected {skewed}"));
            }
            fares.insert("isolated", iso.unwrap_or_default());
            fares.insert("shared", sh.unwrap_or_default());
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(60) {
        failures.push(format!("took {elapsed:.1?}"));
    }
    let summary = format!(
        "{asymmetric}/4 cases succeed shared and fail isolated; cs1 fare raw ${raw}, isolated ${}, shared ${}; {:.1}s",
        fares.get("isolated").cloned().unwrap_or_default(),
        fares.get("shared").cloned().unwrap_or_default(),
        elapsed.as_secs_f64()
    );
    verdict(failures, summary)
}

fn functionality_parity(cfg: &HarnessConfig) -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut scores = Vec::new();
    let alice = fixture("userdb.json")["users"].as_array().unwrap().iter().find(|u| u["name"] == "alice").unwrap()["email"]
        .as_str()
        .unwrap()
        .to_string();
    for mode in Mode::ALL {
        for suite in Suite::ALL {
            let r = run_benchmark(suite, mode, cfg);
            scores.push(format!("{}/{}={:.2}/{:.2}", suite.name(), mode.name(), r.steps_score, r.overall_score));
            if r.steps_score != 1.0 || r.overall_score != 1.0 {
                let bad: Vec<&str> = r.rows.iter().filter(|c| !c.step_correct || !c.overall_correct).map(|c| c.id.as_str()).collect();
                failures.push(format!("{} {}: {bad:?}", suite.name(), mode.name()));
            }
            if suite == Suite::SingleApp {
                let listing = r.rows.iter().find(|c| c.query == "what is alice's email address?");
                match listing {
                    Some(c) if c.observed_steps == ["find_users_by_name", "get_user_email"] && c.output.contains(&alice) => {}
                    other => failures.push(format!("lookup case in {}: {:?}", mode.name(), other.map(|c| (&c.observed_steps, &c.output)))),
                }
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(120) {
        failures.push(format!("took {elapsed:.1?}"));
    }
    verdict(failures, format!("steps/overall {}; two-step lookup yields {alice}; {:.1}s", scores.join(" "), elapsed.as_secs_f64()))
}

fn isc_robustness() -> Verdict {
    let mut failures = Vec::new();
    let s = run_corpus(2024, 1000);
    for (name, got, want) in [
        ("oracle-malformed", s.oracle_malformed, 1000),
        ("dropped", s.drops, 1000),
        ("malformed replies", s.malformed_replies, 1000),
        ("relayed", s.relayed, 0),
        ("backend calls", s.backend_calls, 0),
        ("markers in prompts", s.marker_leaks, 0),
        ("user prompts", s.user_questions, 0),
    ] {
        if got != want {
            failures.push(format!("{name}={got}, want {want}"));
        }
    }
    let (mut hub, _) = fixture_hub(DEFAULT_STRING_LIMIT);
    let sid = negotiate(&mut hub);
    let at = deliver_note(&mut hub, &sid, "n".repeat(DEFAULT_STRING_LIMIT));
    let over = deliver_note(&mut hub, &sid, "n".repeat(DEFAULT_STRING_LIMIT + 1));
    if at != Ok(Payload::new().with("typed", "z")) {
        failures.push(format!("limit-length string: {at:?}"));
    }
    if over != Err(FailureCode::Malformed) {
        failures.push(format!("limit+1 string: {over:?}"));
    }
    let summary = format!(
        "{}/{} dropped across {} mutation kinds, {} relayed, {} in prompts, {} user prompts; {} chars accepted, {} rejected",
        s.drops,
        s.sent,
        s.kinds.len(),
        s.relayed,
        s.marker_leaks,
        s.user_questions,
        DEFAULT_STRING_LIMIT,
        DEFAULT_STRING_LIMIT + 1
    );
    verdict(failures, summary)
}

fn permission_soundness() -> Verdict {
    let mut failures = Vec::new();
    let e = enumerate(6);
    if !e.mismatches.is_empty() {
        failures.push(format!("{} mismatches, first {:?}", e.mismatches.len(), e.mismatches[0]));
    }
    if e.ban_attempts == 0 || e.ban_attempts != e.ban_rejections {
        failures.push(format!("permanent irreversible grants: {} attempted, {} rejected", e.ban_attempts, e.ban_rejections));
    }
    if e.irreversible_allows != 0 {
        failures.push(format!("{} checks allowed an irreversible scope via a permanent grant", e.irreversible_allows));
    }
    let prompt = PromptRequest::new(PermissionScope::data_egress("gmail_like", "send_email", true), "send", None);
    if prompt.options.contains(&PromptOption::AllowAlways) {
        failures.push("irreversible prompt offers allow-always".into());
    }
    verdict(
        failures,
        format!(
            "{} sequences, {} steps match the reference; {}/{} permanent irreversible grants rejected",
            e.sequences, e.steps, e.ban_rejections, e.ban_attempts
        ),
    )
}

/// First window of `n` characters of `source` that occurs in `text`.
fn common_window(source: &str, text: &str, n: usize) -> Option<String> {
    let chars: Vec<char> = source.chars().collect();
    chars.windows(n).map(|w| w.iter().collect::<String>()).find(|w| text.contains(w.as_str()))
}

fn isolation_invariants(run: &hubspoke::harness::FullRun) -> Verdict {
    let mut failures = Vec::new();
    let descriptions: Vec<(String, String)> = builtin_suite().into_iter().map(|m| (m.app_id, m.description)).collect();
    let mut checked = 0;
    let prompts = run
        .benches
        .iter()
        .filter(|b| b.mode == Mode::Isolated)
        .flat_map(|b| b.transcripts.iter().map(|t| &t.trace))
        .chain(run.attacks.iter().filter(|a| a.mode == Mode::Isolated).map(|a| &a.trace))
        .flat_map(|t| t.prompts.iter())
        .filter(|p| p.principal != "hub");
    for p in prompts {
        checked += 1;
        for (app, description) in descriptions.iter().filter(|(app, _)| *app != p.principal) {
            if let Some(w) = common_window(description, &p.text, 20) {
                failures.push(format!("{} prompt carries {app}'s description: {w:?}", p.principal));
            }
        }
    }

    // Control: the same check over the shared baseline must find leaks.
    let shared_leaks = run
        .benches
        .iter()
        .filter(|b| b.mode == Mode::Shared)
        .flat_map(|b| b.transcripts.iter().flat_map(|t| t.trace.prompts.iter()))
        .filter(|p| descriptions.iter().filter(|(_, d)| common_window(d, &p.text, 20).is_some()).count() > 1)
        .count();
    if shared_leaks == 0 {
        failures.push("control: no shared-mode prompt carries two apps' descriptions".into());
    }

    let triad = common::triad::run();
    let denied = triad.iter().filter(|t| t.1).count();
    for (attempt, ok, obs) in &triad {
        if !ok {
            failures.push(format!("{attempt} not denied: {obs}"));
        }
    }

    let rules = load_rules();
    let mut guard = EgressGuard::default();
    let mut agree = 0;
    for (host, root) in HOSTS {
        let oracle = oracle_etld1(&rules, host);
        let expected = match &oracle {
            None => EgressDecision::Block(BlockReason::InvalidHost),
            Some(d) if d != root => EgressDecision::Block(BlockReason::OffDomain),
            Some(_) => EgressDecision::Allow,
        };
        if etld_plus_one(host).ok() == oracle && guard.guard(host, "app", root, CheckResult::Allow) == expected {
            agree += 1;
        } else {
            failures.push(format!("{host} under {root}"));
        }
    }
    verdict(
        failures,
        format!(
            "{checked} spoke prompts hold no 20-char cross-app description text ({shared_leaks} shared-mode prompts do); denial triad {denied}/3; eTLD+1 decisions {agree}/{} match the oracle",
            HOSTS.len()
        ),
    )
}

fn overhead(run: &hubspoke::harness::FullRun) -> Verdict {
    let rows = &run.overhead.rows;
    let failures: Vec<String> =
        rows.iter().filter(|r| r.extra_planning() != 1).map(|r| format!("{}: {:+} planning calls", r.case, r.extra_planning())).collect();
    let table = render_overhead(&run.overhead);
    let shaped = ["planning", "execution", "memory"].iter().all(|h| table.to_lowercase().contains(h));
    println!("{table}");
    let mut failures = failures;
    if !shaped {
        failures.push("timing report lacks a phase column".into());
    }
    if rows.is_empty() {
        failures.push("no single-app cases".into());
    }
    verdict(failures, format!("{}/{} single-app queries use exactly one extra planning call", rows.iter().filter(|r| r.extra_planning() == 1).count(), rows.len()))
}

fn determinism(first: &hubspoke::harness::FullRun, cfg: &HarnessConfig) -> Verdict {
    let second = run_all(cfg);
    let mut failures = Vec::new();
    if first.report != second.report {
        failures.push("reports differ".into());
    }
    if first.transcript != second.transcript {
        failures.push("transcripts differ".into());
    }
    verdict(
        failures,
        format!("seed {SEED}: report {} bytes and transcript {} bytes identical across two runs", first.report.len(), first.transcript.len()),
    )
}

fn main() -> ExitCode {
    let cfg = harness_config();
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    results.push(("attack asymmetry", attack_asymmetry(&cfg)));
    results.push(("functionality parity", functionality_parity(&cfg)));
    results.push(("ISC robustness", isc_robustness()));
    results.push(("permission soundness", permission_soundness()));
    let run = run_all(&cfg);
    results.push(("isolation invariants", isolation_invariants(&run)));
    results.push(("overhead accounting", overhead(&run)));
    results.push(("determinism", determinism(&run, &cfg)));
    let mut all = true;
    for (name, v) in &results {
        all &= v.pass;
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
