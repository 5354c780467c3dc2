//! Brute-force registrable-domain oracle: every rule of the bundled list is
//! matched label by label against the host, and the prevailing rule picked
//! by the list's published precedence (exceptions first, then most labels,
//! then the implicit `*`).

use std::path::PathBuf;

pub struct Rule {
    labels: Vec<String>,
    exception: bool,
}

pub fn load_rules() -> Vec<Rule> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/public_suffix_subset.dat");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("//"))
        .map(|l| {
            let (exception, body) = match l.strip_prefix('!') {
                Some(rest) => (true, rest),
                None => (false, l),
            };
            Rule { labels: body.to_lowercase().split('.').map(String::from).collect(), exception }
        })
        .collect()
}

fn matches(rule: &Rule, host: &[&str]) -> bool {
    rule.labels.len() <= host.len()
        && rule.labels.iter().rev().zip(host.iter().rev()).all(|(r, h)| r == "*" || r == h)
}

fn host_ok(host: &str) -> bool {
    let labels: Vec<&str> = host.split('.').collect();
    if labels.iter().any(|l| l.is_empty() || l.len() > 63 || l.starts_with('-') || l.ends_with('-')) {
        return false;
    }
    if !host.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'.') {
        return false;
    }
    // Numeric final label: an address literal, not a name.
    !labels.last().unwrap().bytes().all(|b| b.is_ascii_digit())
}

/// eTLD+1 of `host`, or `None` when the host is invalid or is itself a
/// public suffix.
pub fn oracle_etld1(rules: &[Rule], host: &str) -> Option<String> {
    let host = host.strip_suffix('.').unwrap_or(host).to_ascii_lowercase();
    if host.is_empty() || !host_ok(&host) {
        return None;
    }
    let labels: Vec<&str> = host.split('.').collect();
    let matching: Vec<&Rule> = rules.iter().filter(|r| matches(r, &labels)).collect();
    let suffix_len = if let Some(e) = matching.iter().find(|r| r.exception) {
        e.labels.len() - 1
    } else {
        matching.iter().map(|r| r.labels.len()).max().unwrap_or(1)
    };
    (labels.len() > suffix_len).then(|| labels[labels.len() - suffix_len - 1..].join("."))
}

/// Fifty hosts with their app root: plain, multi-label, wildcard and
/// exception suffixes, private-registry suffixes, case and trailing dots,
/// bare suffixes, literals and malformed names.
pub const HOSTS: [(&str, &str); 50] = [
    ("api.metrohail.example", "metrohail.example"),
    ("metrohail.example", "metrohail.example"),
    ("evil.example", "metrohail.example"),
    ("metrohail.example.evil.example", "metrohail.example"),
    ("a.b.co.uk", "b.co.uk"),
    ("b.co.uk", "b.co.uk"),
    ("co.uk", "co.uk"),
    ("x.c.co.uk", "b.co.uk"),
    ("www.example.com", "example.com"),
    ("example.com", "example.com"),
    ("deep.sub.example.com", "example.com"),
    ("com", "example.com"),
    ("mail.google.com", "google.com"),
    ("user.github.io", "user.github.io"),
    ("other.github.io", "user.github.io"),
    ("a.user.github.io", "user.github.io"),
    ("github.io", "github.io"),
    ("foo.blogspot.com", "foo.blogspot.com"),
    ("blogspot.com", "blogspot.com"),
    ("app.herokuapp.com", "app.herokuapp.com"),
    ("bucket.s3.amazonaws.com", "bucket.s3.amazonaws.com"),
    ("s3.amazonaws.com", "amazonaws.com"),
    ("site.pages.dev", "site.pages.dev"),
    ("pages.dev", "pages.dev"),
    ("foo.bar.kawasaki.jp", "foo.bar.kawasaki.jp"),
    ("bar.kawasaki.jp", "bar.kawasaki.jp"),
    ("city.kawasaki.jp", "city.kawasaki.jp"),
    ("www.city.kawasaki.jp", "city.kawasaki.jp"),
    ("shop.co.jp", "shop.co.jp"),
    ("www.shop.co.jp", "shop.co.jp"),
    ("x.y.ck", "x.y.ck"),
    ("www.ck", "www.ck"),
    ("a.www.ck", "www.ck"),
    ("store.com.au", "store.com.au"),
    ("www.store.com.au", "store.com.au"),
    ("shop.ny.us", "shop.ny.us"),
    ("ny.us", "ny.us"),
    ("x.ny.us", "shop.ny.us"),
    ("WWW.Example.COM", "example.com"),
    ("www.example.com.", "example.com"),
    ("api.typewriter.example", "typewriter.example"),
    ("typewriter.example.", "typewriter.example"),
    ("127.0.0.1", "example.com"),
    ("10.0.0.1", "typewriter.example"),
    ("a..example.com", "example.com"),
    ("-bad.example.com", "example.com"),
    ("under_score.example.com", "example.com"),
    ("localhost", "localhost"),
    ("drive.example", "drive.example"),
    ("files.drive.example", "mail.example"),
];
