//! Outbound request guard: same registrable domain as the app's root, and a
//! covering data_egress grant.

use serde::{Deserialize, Serialize};

use super::psl::{PslError, PublicSuffixList};
use crate::permission::CheckResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockReason {
    InvalidHost,
    OffDomain,
    NoGrant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum EgressDecision {
    Allow,
    Block(BlockReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgressRecord {
    pub host: String,
    pub app: String,
    pub decision: EgressDecision,
    pub suffix_list_version: String,
}

#[derive(Debug)]
pub struct EgressGuard {
    psl: &'static PublicSuffixList,
    log: Vec<EgressRecord>,
}

impl Default for EgressGuard {
    fn default() -> Self {
        Self::new(PublicSuffixList::bundled())
    }
}

/// Host part of an absolute http(s) URL.
pub fn host_of(url: &str) -> Result<String, PslError> {
    let bad = || PslError::InvalidHost(url.to_string());
    let parsed = url::Url::parse(url).map_err(|_| bad())?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err(bad());
    }
    match parsed.host() {
        Some(url::Host::Domain(d)) => Ok(d.to_string()),
        _ => Err(bad()),
    }
}

impl EgressGuard {
    pub fn new(psl: &'static PublicSuffixList) -> Self {
        EgressGuard { psl, log: Vec::new() }
    }

    /// Registrable domain of `host`, used as the egress permission subject.
    pub fn domain_of(&self, host: &str) -> Result<String, PslError> {
        self.psl.etld_plus_one(host)
    }

    /// Pure decision plus a log entry. Every error path blocks.
    pub fn guard(&mut self, host: &str, app: &str, root_domain: &str, permission: CheckResult) -> EgressDecision {
        let decision = match self.psl.etld_plus_one(host) {
            Err(_) => EgressDecision::Block(BlockReason::InvalidHost),
            Ok(domain) if domain != root_domain.to_lowercase() => EgressDecision::Block(BlockReason::OffDomain),
            Ok(_) if permission != CheckResult::Allow => EgressDecision::Block(BlockReason::NoGrant),
            Ok(_) => EgressDecision::Allow,
        };
        self.log.push(EgressRecord {
            host: host.to_string(),
            app: app.to_string(),
            decision,
            suffix_list_version: self.psl.version().to_string(),
        });
        decision
    }

    pub fn log(&self) -> &[EgressRecord] {
        &self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decisions() {
        let mut g = EgressGuard::default();
        let allow = CheckResult::Allow;
        assert_eq!(g.guard("api.metrohail.example", "metro_hail", "metrohail.example", allow), EgressDecision::Allow);
        assert_eq!(
            g.guard("evil.example", "metro_hail", "metrohail.example", allow),
            EgressDecision::Block(BlockReason::OffDomain)
        );
        assert_eq!(
            g.guard("api.metrohail.example", "metro_hail", "metrohail.example", CheckResult::DenyPromptNeeded),
            EgressDecision::Block(BlockReason::NoGrant)
        );
        assert_eq!(
            g.guard("127.0.0.1", "metro_hail", "metrohail.example", allow),
            EgressDecision::Block(BlockReason::InvalidHost)
        );
        assert_eq!(g.log().len(), 4);
        assert!(g.log().iter().all(|r| r.suffix_list_version == "subset-2025.1"));
    }

    #[test]
    fn url_hosts() {
        assert_eq!(host_of("https://api.metrohail.example/fare?x=1").unwrap(), "api.metrohail.example");
        assert!(host_of("http://10.0.0.1/").is_err());
        assert!(host_of("file:///etc/passwd").is_err());
    }
}
