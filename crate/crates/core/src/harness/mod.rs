//! Benchmarks and attack scenarios, run in isolated mode (the full hub
//! and spoke pipeline) and in shared mode (the non-isolated baseline).

mod attacks;
mod report;
mod shared;
mod suites;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use attacks::{run_attack, shared_fragment, AttackCase, AttackVerdict, FareCheck, LEAK_WINDOW};
pub use report::{
    measure_overhead, render_attacks, render_bench, render_call_counts, render_overhead, run_all, FullRun, OverheadReport, OverheadRow, TimingRow,
    TimingTable,
};
pub use shared::{merged_manifest, SharedRuntime, SHARED};
pub use suites::{
    cases, edit_distance, run_benchmark, string_score, BenchReport, Case, CaseRow, CaseTranscript, Expect, Suite,
};

use crate::config::HubConfig;
use crate::hub::{Hub, ScriptedUser};
use crate::llm::BackendSpec;
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Isolated,
    Shared,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Isolated, Mode::Shared];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Isolated => "isolated",
            Mode::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub seed: u64,
    pub backend: BackendSpec,
    pub spoke_bin: Option<PathBuf>,
}

impl HarnessConfig {
    pub fn new(seed: u64) -> Self {
        HarnessConfig { seed, backend: BackendSpec::sim(seed), spoke_bin: None }
    }

    pub fn hub_config(&self, installed: &[&str]) -> HubConfig {
        let mut c = HubConfig::default().with_installed(installed).with_seed(self.seed);
        c.backend = self.backend.clone();
        c.spoke_bin = self.spoke_bin.clone();
        c
    }
}

/// Either execution mode behind one query interface.
pub enum Runtime {
    Isolated(Box<Hub>),
    Shared(Box<SharedRuntime>),
}

impl Runtime {
    pub fn start(mode: Mode, installed: &[&str], user: ScriptedUser, cfg: &HarnessConfig) -> Result<Runtime, String> {
        let config = cfg.hub_config(installed);
        Ok(match mode {
            Mode::Isolated => Runtime::Isolated(Box::new(Hub::new(config, Box::new(user)).map_err(|e| e.to_string())?)),
            Mode::Shared => Runtime::Shared(Box::new(SharedRuntime::new(config, Box::new(user))?)),
        })
    }

    pub fn query(&mut self, text: &str) -> Result<String, String> {
        match self {
            Runtime::Isolated(h) => h.handle_user_query(text).map(|r| r.text).map_err(|e| e.to_string()),
            Runtime::Shared(s) => s.handle_query(text),
        }
    }

    /// Answers `text` and reports the wall time taken.
    pub fn timed_query(&mut self, text: &str) -> (Result<String, String>, f64) {
        let started = Instant::now();
        let result = self.query(text);
        (result, started.elapsed().as_secs_f64())
    }

    pub fn trace(&self) -> &Trace {
        match self {
            Runtime::Isolated(h) => h.trace(),
            Runtime::Shared(s) => s.trace(),
        }
    }
}
