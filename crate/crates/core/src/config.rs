//! Hub configuration, loaded from TOML.
//!
//! ```toml
//! seed = 7
//! data_dir = "/var/lib/hubspoke"     # omit for a throwaway temp dir
//! installed = ["gmail_like", "gdrive_like"]
//! recent_window = 10
//! summary_every = 20
//! working_memory_budget = 1500
//! string_limit = 256
//! spoke_timeout_secs = 120
//! prompt_timeout_secs = 60
//!
//! [backend]                          # planner and default spoke backend
//! kind = "scripted"
//! table = "sim"
//! seed = 7
//! context_window_tokens = 8192
//!
//! [sandbox]
//! cpu_seconds = 60
//! max_virtual_memory_bytes = 536870912
//! max_created_file_bytes = 16777216
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::isc::{ValidationRules, DEFAULT_STRING_LIMIT};
use crate::llm::BackendSpec;
use crate::memory::{DEFAULT_RECENT_WINDOW, DEFAULT_SUMMARY_EVERY};
use crate::sandbox::SandboxPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HubConfig {
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub installed: Vec<String>,
    pub backend: BackendSpec,
    pub recent_window: usize,
    pub summary_every: u64,
    pub working_memory_budget: usize,
    pub string_limit: usize,
    pub spoke_timeout_secs: u64,
    pub prompt_timeout_secs: u64,
    pub sandbox: SandboxPolicy,
    /// Path of the spoke executable; located next to the running binary
    /// when unset.
    pub spoke_bin: Option<PathBuf>,
    /// Arguments placed before the store arguments of every spoke launch.
    pub spoke_args: Vec<String>,
    /// Accept spokes whose syscall filter could not be installed.
    pub allow_reduced_isolation: bool,
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig {
            seed: 0,
            data_dir: None,
            installed: Vec::new(),
            backend: BackendSpec::sim(0),
            recent_window: DEFAULT_RECENT_WINDOW,
            summary_every: DEFAULT_SUMMARY_EVERY,
            working_memory_budget: 1500,
            string_limit: DEFAULT_STRING_LIMIT,
            spoke_timeout_secs: 120,
            prompt_timeout_secs: 60,
            sandbox: SandboxPolicy::default(),
            spoke_bin: None,
            spoke_args: Vec::new(),
            allow_reduced_isolation: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
}

impl HubConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    pub fn rules(&self) -> ValidationRules {
        ValidationRules { string_limit: self.string_limit }
    }

    pub fn with_installed(mut self, apps: &[&str]) -> Self {
        self.installed = apps.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.backend = BackendSpec::sim(seed);
        self
    }
}

/// Locates the spoke executable: `HUBSPOKE_SPOKE_BIN`, then next to the
/// current executable or its parent directory (test binaries live in deps/).
pub fn default_spoke_bin() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("HUBSPOKE_SPOKE_BIN") {
        return Some(PathBuf::from(p));
    }
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?;
    [dir.join("hubspoke-spoke"), dir.parent()?.join("hubspoke-spoke")].into_iter().find(|p| p.is_file())
}
