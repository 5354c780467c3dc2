//! Seeded corpus of malformed collaboration messages and an independent
//! schema oracle for the typed fixture functionality.

use std::sync::atomic::Ordering;

use hubspoke::apps::{AppManifest, Registry};
use hubspoke::config::HubConfig;
use hubspoke::hub::{Hub, ScriptedUser};
use hubspoke::isc::{FailureCode, IscEnvelope, Payload, SpokeSid};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::CountingUser;

pub const FUNCTIONALITY: &str = "book_slot";
pub const FIELDS: [&str; 4] = ["day", "seats", "venue", "note"];

const FIXTURE: &str = r#"
app_id = "slot_booker"
display_name = "Slot Booker"
description = "Books seats at venues on a given day."
root_domain = "slotbooker.example"

[[tools]]
name = "book"
description = "Reserve seats."
handler = "type_z"
params = [
  { name = "day", type = "string" },
  { name = "seats", type = "string" },
  { name = "venue", type = "string" },
  { name = "note", type = "string" },
]

[[functionalities_offered]]
name = "book_slot"
tool = "book"
request = [["day", "date"], ["seats", "integer"], ["venue", "url"], ["note", "bounded_string"]]
response = [["typed", "bounded_string"]]
"#;

pub fn fixture_app() -> AppManifest {
    AppManifest::load(FIXTURE).expect("fixture manifest")
}

/// Hub with a requester (typewriter) and the typed provider, plus a counter
/// of user questions.
pub fn fixture_hub(string_limit: usize) -> (Hub, std::sync::Arc<std::sync::atomic::AtomicUsize>) {
    let mut registry = Registry::builtin();
    registry.add_to_store(fixture_app()).unwrap();
    let mut cfg = HubConfig::default().with_installed(&["typewriter", "slot_booker"]);
    cfg.spoke_bin = Some(env!("CARGO_BIN_EXE_hubspoke-spoke").into());
    cfg.string_limit = string_limit;
    let (user, asked) = CountingUser::new(ScriptedUser::approving());
    (Hub::with_registry(cfg, registry, Box::new(user)).expect("hub starts"), asked)
}

/// Probes the fixture functionality and returns the counterparty sid.
pub fn negotiate(hub: &mut Hub) -> SpokeSid {
    match hub.isc_probe("typewriter", FUNCTIONALITY).expect("probe succeeds") {
        IscEnvelope::FormatResponse { sid, .. } => sid,
        other => panic!("unexpected probe reply {other:?}"),
    }
}

pub fn valid_payload(note: &str) -> Payload {
    Payload::new().with("day", "2025-03-01").with("seats", "4").with("venue", "https://venue.example/hall").with("note", note)
}

// ------------------------------------------------------------------ oracle

fn oracle_date(v: &str) -> bool {
    let parts: Vec<&str> = v.split('-').collect();
    if parts.len() != 3 || parts[0].len() != 4 || parts[1].len() != 2 || parts[2].len() != 2 {
        return false;
    }
    if !parts.iter().all(|p| p.bytes().all(|b| b.is_ascii_digit())) {
        return false;
    }
    let (y, m, d): (u32, u32, u32) = (parts[0].parse().unwrap(), parts[1].parse().unwrap(), parts[2].parse().unwrap());
    let leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    let days = match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if leap => 29,
        2 => 28,
        _ => return false,
    };
    (1..=days).contains(&d)
}

fn oracle_integer(v: &str) -> bool {
    let digits = v.strip_prefix('-').unwrap_or(v);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    v.parse::<i128>().is_ok_and(|n| n >= i64::MIN as i128 && n <= i64::MAX as i128)
}

fn oracle_url(v: &str) -> bool {
    let Some(rest) = v.strip_prefix("https://").or_else(|| v.strip_prefix("http://")) else { return false };
    let host = rest.split(['/', '?', '#']).next().unwrap_or("");
    !host.is_empty() && host.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'-')
}

/// Whether a request payload for the fixture functionality is well formed.
pub fn oracle_accepts(payload: &Payload, limit: usize) -> bool {
    let names: Vec<&str> = payload.0.iter().map(|(k, _)| k.as_str()).collect();
    if names != FIELDS {
        return false;
    }
    let v = |i: usize| payload.0[i].1.as_str();
    oracle_date(v(0)) && oracle_integer(v(1)) && oracle_url(v(2)) && v(3).chars().count() <= limit
}

// ------------------------------------------------------------------ corpus

pub enum Message {
    Envelope(IscEnvelope),
    Raw(Vec<u8>),
}

pub struct FuzzCase {
    pub kind: &'static str,
    pub message: Message,
    /// Distinctive strings carried by the message.
    pub markers: Vec<String>,
}

/// Record encoding written from the wire layout, independent of the crate's
/// encoder: u32 length, tag, then u16-prefixed fields.
pub fn raw_record(tag: u8, fields: &[&[u8]]) -> Vec<u8> {
    let mut body = vec![tag];
    for f in fields {
        body.extend_from_slice(&(f.len() as u16).to_be_bytes());
        body.extend_from_slice(f);
    }
    let mut out = (body.len() as u32).to_be_bytes().to_vec();
    out.extend_from_slice(&body);
    out
}

fn payload_json(p: &Payload) -> String {
    serde_json::to_string(&p.0.iter().map(|(k, v)| [k, v]).collect::<Vec<_>>()).unwrap()
}

const BAD_DATES: &[&str] = &["tomorrow", "2025-02-30", "2025-13-01", "2025-3-1", "20250301", "", "2025/03/01", "0000-00-00"];
const BAD_INTEGERS: &[&str] = &["four", "4.5", "", "+4", "99999999999999999999", "0x10", " 4", "-", "1e3"];
const BAD_URLS: &[&str] = &["ftp://venue.example/a", "/relative", "mailto:a@venue.example", "http://", "javascript:alert(1)", "venue.example", "https//venue.example"];
const KINDS: usize = 12;

/// `n` malformed messages cycling through the mutation kinds.
pub fn corpus(seed: u64, n: usize, sid: &SpokeSid, limit: usize) -> Vec<FuzzCase> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let marker = format!("fzmark{i:04}q");
            let mut payload = valid_payload(&marker);
            let kind = i % KINDS;
            let mut env_sid = sid.clone();
            let mut raw = None;
            let name = match kind {
                0 => {
                    let at = rng.random_range(0..4);
                    payload.0.remove(at);
                    "presence:missing"
                }
                1 => {
                    let at = rng.random_range(0..=4);
                    payload.0.insert(at, (format!("extra{}", rng.random_range(0..100)), marker.clone()));
                    "presence:extra"
                }
                2 => {
                    let at = rng.random_range(0..4);
                    let dup = payload.0[at].clone();
                    payload.0.insert(rng.random_range(0..=4), dup);
                    "presence:duplicate"
                }
                3 => {
                    let a = rng.random_range(0..4);
                    let b = (a + rng.random_range(1..4)) % 4;
                    payload.0.swap(a, b);
                    "order:swap"
                }
                4 => {
                    let at = rng.random_range(0..4);
                    payload.0[at].0 = format!("{}_x", payload.0[at].0);
                    "presence:renamed"
                }
                5 => {
                    payload.0[0].1 = BAD_DATES.choose(&mut rng).unwrap().to_string();
                    "type:date"
                }
                6 => {
                    payload.0[1].1 = BAD_INTEGERS.choose(&mut rng).unwrap().to_string();
                    "type:integer"
                }
                7 => {
                    payload.0[2].1 = BAD_URLS.choose(&mut rng).unwrap().to_string();
                    "type:url"
                }
                8 => {
                    let extra = if rng.random_bool(0.1) { 10_000 } else { rng.random_range(1..500) };
                    let fill = "y".repeat(limit + extra - marker.len());
                    payload.0[3].1 = format!("{marker}{fill}");
                    "length:over"
                }
                9 => {
                    loop {
                        let other = SpokeSid::mint(&mut rng);
                        if &other != sid {
                            env_sid = other;
                            break;
                        }
                    }
                    "envelope:sid"
                }
                10 => {
                    let bytes = raw_record(2, &[sid.as_str().as_bytes(), FUNCTIONALITY.as_bytes(), payload_json(&payload).as_bytes()]);
                    let (mutated, label) = match rng.random_range(0..6) {
                        0 => (bytes[..rng.random_range(1..bytes.len())].to_vec(), "wire:truncated"),
                        1 => {
                            let mut b = bytes.clone();
                            b[4] = rng.random_range(4..=255);
                            (b, "wire:tag")
                        }
                        2 => {
                            let mut b = bytes.clone();
                            let len = u32::from_be_bytes([b[0], b[1], b[2], b[3]]) + 1;
                            b[..4].copy_from_slice(&len.to_be_bytes());
                            (b, "wire:length")
                        }
                        3 => {
                            let mut b = bytes.clone();
                            let at = b.len() - 3;
                            b[at] = 0xff;
                            (b, "wire:utf8")
                        }
                        4 => {
                            let garbage = format!("{{\"note\": \"{marker}\"}}");
                            (raw_record(2, &[sid.as_str().as_bytes(), FUNCTIONALITY.as_bytes(), garbage.as_bytes()]), "wire:payload_json")
                        }
                        _ => {
                            let json = payload_json(&payload);
                            (raw_record(2, &[sid.as_str().as_bytes(), FUNCTIONALITY.as_bytes(), json.as_bytes(), b"trailing"]), "wire:field_count")
                        }
                    };
                    raw = Some(mutated);
                    label
                }
                _ => {
                    // Right shape, wrong message kind.
                    raw = Some(raw_record(3, &[sid.as_str().as_bytes(), payload_json(&payload).as_bytes()]));
                    "envelope:kind"
                }
            };
            let mut markers = vec![marker];
            markers.extend(payload.0.iter().map(|(_, v)| v.clone()).filter(|v| v.len() >= 12 && v.starts_with("fzmark")));
            let message = match raw {
                Some(bytes) => Message::Raw(bytes),
                None => Message::Envelope(IscEnvelope::Request { sid: env_sid, functionality: FUNCTIONALITY.into(), payload }),
            };
            FuzzCase { kind: name, message, markers }
        })
        .collect()
}

/// Whether a corpus entry is malformed according to the oracle alone.
pub fn oracle_malformed(case: &FuzzCase, sid: &SpokeSid, limit: usize) -> bool {
    match &case.message {
        Message::Envelope(IscEnvelope::Request { sid: s, functionality, payload }) => {
            s != sid || functionality != FUNCTIONALITY || !oracle_accepts(payload, limit)
        }
        Message::Envelope(_) => true,
        // Raw entries are built malformed: kind 3 records, broken framing,
        // or payloads that the oracle itself rejects.
        Message::Raw(bytes) => {
            if bytes.len() < 5 || bytes[4] != 2 {
                return true;
            }
            let declared = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
            if declared != bytes.len() - 4 {
                return true;
            }
            let mut fields = Vec::new();
            let mut at = 5;
            while at + 2 <= bytes.len() {
                let len = u16::from_be_bytes([bytes[at], bytes[at + 1]]) as usize;
                if at + 2 + len > bytes.len() {
                    return true;
                }
                fields.push(&bytes[at + 2..at + 2 + len]);
                at += 2 + len;
            }
            if at != bytes.len() || fields.len() != 3 {
                return true;
            }
            let Ok(json) = std::str::from_utf8(fields[2]) else { return true };
            match Payload::from_json(json) {
                Some(p) => fields[0] != sid.as_str().as_bytes() || fields[1] != FUNCTIONALITY.as_bytes() || !oracle_accepts(&p, limit),
                None => true,
            }
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FuzzStats {
    pub sent: usize,
    pub oracle_malformed: usize,
    pub malformed_replies: usize,
    pub drops: usize,
    pub relayed: usize,
    pub backend_calls: usize,
    pub marker_leaks: usize,
    pub user_questions: usize,
    pub kinds: std::collections::BTreeMap<&'static str, usize>,
}

/// Feeds the corpus to a live hub and measures what got through.
pub fn run_corpus(seed: u64, n: usize) -> FuzzStats {
    let limit = hubspoke::isc::DEFAULT_STRING_LIMIT;
    let (mut hub, asked) = fixture_hub(limit);
    let sid = negotiate(&mut hub);
    let cases = corpus(seed, n, &sid, limit);
    let drops_before = hub.audit().events("isc_drop").count();
    let relays_before = hub.audit().events("isc_relay").count();
    let prompts_before = hub.trace().prompts.len();
    let asked_before = asked.load(Ordering::SeqCst);
    let mut stats = FuzzStats { sent: cases.len(), ..Default::default() };
    for case in &cases {
        *stats.kinds.entry(case.kind).or_default() += 1;
        if oracle_malformed(case, &sid, limit) {
            stats.oracle_malformed += 1;
        }
        let result = match &case.message {
            Message::Envelope(env) => hub.isc_request("typewriter", env.clone()),
            Message::Raw(bytes) => hub.isc_deliver_raw("typewriter", bytes),
        };
        if result == Err(FailureCode::Malformed) {
            stats.malformed_replies += 1;
        }
    }
    stats.drops = hub.audit().events("isc_drop").count() - drops_before;
    stats.relayed = hub.audit().events("isc_relay").count() - relays_before;
    stats.backend_calls = hub.trace().prompts.len() - prompts_before;
    stats.user_questions = asked.load(Ordering::SeqCst) - asked_before;
    stats.marker_leaks = cases
        .iter()
        .filter(|c| hub.trace().prompts.iter().any(|p| c.markers.iter().any(|m| p.text.contains(m.as_str()))))
        .count();
    stats
}

/// Delivery result for a note of exactly `len` characters.
pub fn deliver_note(hub: &mut Hub, sid: &SpokeSid, note: String) -> Result<Payload, FailureCode> {
    let env = IscEnvelope::Request { sid: sid.clone(), functionality: FUNCTIONALITY.into(), payload: valid_payload(&note) };
    hub.isc_request("typewriter", env)
}
