//! Registrable-domain (eTLD+1) computation over a bundled suffix snapshot.

use std::collections::HashSet;
use std::net::Ipv4Addr;
use std::sync::LazyLock;

const SNAPSHOT: &str = include_str!("../../data/public_suffix_subset.dat");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PslError {
    #[error("invalid host {0:?}")]
    InvalidHost(String),
}

#[derive(Debug, Clone)]
pub struct PublicSuffixList {
    version: String,
    rules: HashSet<String>,
    wildcards: HashSet<String>,
    exceptions: HashSet<String>,
}

static BUNDLED: LazyLock<PublicSuffixList> = LazyLock::new(|| PublicSuffixList::parse(SNAPSHOT));

impl PublicSuffixList {
    pub fn bundled() -> &'static PublicSuffixList {
        &BUNDLED
    }

    /// Standard list syntax: one rule per line, `//` comments, `*.` wildcard
    /// and `!` exception prefixes. A `// VERSION: x` comment names the snapshot.
    pub fn parse(text: &str) -> Self {
        let mut list = PublicSuffixList {
            version: "unversioned".into(),
            rules: HashSet::new(),
            wildcards: HashSet::new(),
            exceptions: HashSet::new(),
        };
        for line in text.lines().map(str::trim) {
            if let Some(comment) = line.strip_prefix("//") {
                if let Some(v) = comment.trim().strip_prefix("VERSION:") {
                    list.version = v.trim().to_string();
                }
                continue;
            }
            let rule = line.split_whitespace().next().unwrap_or("").to_lowercase();
            if rule.is_empty() {
                continue;
            }
            if let Some(rest) = rule.strip_prefix('!') {
                list.exceptions.insert(rest.to_string());
            } else if let Some(rest) = rule.strip_prefix("*.") {
                list.wildcards.insert(rest.to_string());
            } else {
                list.rules.insert(rule);
            }
        }
        list
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Number of labels in the public suffix of `labels`.
    fn suffix_len(&self, labels: &[&str]) -> usize {
        let n = labels.len();
        let joined = |k: usize| labels[n - k..].join(".");
        for k in (1..=n).rev() {
            if self.exceptions.contains(&joined(k)) {
                return k - 1;
            }
        }
        let mut best = 1;
        for k in 1..=n {
            let suffix = joined(k);
            if self.rules.contains(&suffix) {
                best = best.max(k);
            }
            if k < n && self.wildcards.contains(&suffix) {
                best = best.max(k + 1);
            }
        }
        best
    }

    pub fn etld_plus_one(&self, host: &str) -> Result<String, PslError> {
        let host = normalize_host(host)?;
        let labels: Vec<&str> = host.split('.').collect();
        let suffix = self.suffix_len(&labels);
        if labels.len() <= suffix {
            return Err(PslError::InvalidHost(host));
        }
        Ok(labels[labels.len() - suffix - 1..].join("."))
    }
}

/// Lowercases, drops one trailing dot, and rejects IP literals and
/// syntactically invalid names.
pub fn normalize_host(host: &str) -> Result<String, PslError> {
    let bad = || PslError::InvalidHost(host.to_string());
    let h = host.trim().trim_end_matches('.').to_lowercase();
    if h.is_empty() || h.len() > 253 || h.contains(':') || h.starts_with('[') || h.parse::<Ipv4Addr>().is_ok() {
        return Err(bad());
    }
    let labels: Vec<&str> = h.split('.').collect();
    if labels.last().is_some_and(|l| l.chars().all(|c| c.is_ascii_digit())) {
        return Err(bad());
    }
    for label in &labels {
        let ok = !label.is_empty()
            && label.len() <= 63
            && label.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
            && !label.starts_with('-')
            && !label.ends_with('-');
        if !ok {
            return Err(bad());
        }
    }
    Ok(h)
}

pub fn etld_plus_one(host: &str) -> Result<String, PslError> {
    PublicSuffixList::bundled().etld_plus_one(host)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(etld_plus_one("a.b.co.uk").unwrap(), "b.co.uk");
        assert_eq!(etld_plus_one("example.com").unwrap(), "example.com");
        assert_eq!(etld_plus_one("api.metrohail.example").unwrap(), "metrohail.example");
        assert_eq!(etld_plus_one("WWW.Example.COM.").unwrap(), "example.com");
    }

    #[test]
    fn wildcards_and_exceptions() {
        assert_eq!(etld_plus_one("a.b.kawasaki.jp").unwrap(), "a.b.kawasaki.jp");
        assert_eq!(etld_plus_one("x.city.kawasaki.jp").unwrap(), "city.kawasaki.jp");
        assert_eq!(etld_plus_one("www.ck").unwrap(), "www.ck");
        assert!(etld_plus_one("foo.ck").is_err());
        assert_eq!(etld_plus_one("me.github.io").unwrap(), "me.github.io");
    }

    #[test]
    fn invalid_hosts() {
        for h in ["10.0.0.1", "[::1]", "::1", "", "co.uk", "com", "bad_label.com", "-a.com", "a..com", "1.2.3.4"] {
            assert!(etld_plus_one(h).is_err(), "{h}");
        }
    }

    #[test]
    fn version_is_pinned() {
        assert_eq!(PublicSuffixList::bundled().version(), "subset-2025.1");
    }
}
