//! Registrable-domain (eTLD+1) resolution against a public-suffix snapshot.
//!
//! The snapshot is a plain list of exact suffixes bundled with the crate and
//! overridable from a file. Wildcard and exception rules of the full upstream
//! list are out of scope; unknown suffixes fall back to the last two labels.

use std::collections::BTreeSet;
use std::fmt;

use url::Url;

const DEFAULT_SNAPSHOT: &str = include_str!("../data/public_suffixes.txt");

/// Exact-match public suffix set.
#[derive(Debug, Clone)]
pub struct SuffixList {
    suffixes: BTreeSet<String>,
}

impl Default for SuffixList {
    fn default() -> Self {
        Self::parse(DEFAULT_SNAPSHOT)
    }
}

impl SuffixList {
    /// Parses a snapshot: one suffix per line, `#` comments and blanks ignored.
    pub fn parse(text: &str) -> Self {
        let suffixes = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with('!'))
            .filter(|l| !l.contains('*'))
            .map(|l| l.trim_start_matches('.').to_ascii_lowercase())
            .collect();
        Self { suffixes }
    }

    pub fn is_suffix(&self, candidate: &str) -> bool {
        self.suffixes.contains(candidate)
    }

    /// Longest public suffix of `host`, if any label boundary matches.
    pub fn public_suffix<'a>(&self, host: &'a str) -> Option<&'a str> {
        let mut start = 0usize;
        let mut best: Option<&str> = None;
        loop {
            let candidate = &host[start..];
            if self.suffixes.contains(&candidate.to_ascii_lowercase()) && best.is_none() {
                best = Some(candidate);
            }
            match host[start..].find('.') {
                Some(dot) => start += dot + 1,
                None => break,
            }
        }
        // Prefer the longest match: scan from the left, the first hit is the
        // longest candidate because candidates shrink as `start` advances.
        best
    }

    /// Registrable domain (public suffix plus one label). A host that is
    /// itself a suffix, an IP literal, or a single label is returned as-is.
    /// Hosts with no known suffix fall back to their last two labels.
    pub fn registrable_domain(&self, host: &str) -> String {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        if host.parse::<std::net::IpAddr>().is_ok() || !host.contains('.') {
            return host;
        }
        if let Some(suffix) = self.public_suffix(&host) {
            if suffix.len() == host.len() {
                return host;
            }
            let head = &host[..host.len() - suffix.len() - 1];
            let label = head.rsplit('.').next().unwrap_or(head);
            return format!("{label}.{suffix}");
        }
        let mut labels: Vec<&str> = host.rsplit('.').take(2).collect();
        labels.reverse();
        labels.join(".")
    }
}

/// True when `host` is strictly below `domain` (e.g. `a.x.com` under `x.com`).
pub fn is_strict_subdomain(host: &str, domain: &str) -> bool {
    let host = host.to_ascii_lowercase();
    let domain = domain.to_ascii_lowercase();
    host != domain && host.ends_with(&format!(".{domain}"))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unparseable url: {url}")]
pub struct UnparseableUrl {
    pub url: String,
}

/// Parsed pieces of a URL that the feature and attack code care about.
#[derive(Debug, Clone)]
pub struct UrlParts {
    pub host: String,
    pub path: String,
    pub query: Option<String>,
}

impl UrlParts {
    pub fn parse(raw: &str) -> Result<Self, UnparseableUrl> {
        let parsed = Url::parse(raw).map_err(|_| UnparseableUrl { url: raw.to_string() })?;
        let host = parsed
            .host_str()
            .ok_or_else(|| UnparseableUrl { url: raw.to_string() })?
            .to_string();
        Ok(Self {
            host,
            path: parsed.path().to_string(),
            query: parsed.query().map(str::to_string),
        })
    }

    /// Query split into `(name, value)` pairs on `&` and the first `=`.
    /// A piece without `=` yields an empty name and the piece as value, so
    /// bare tokens still participate in value matching.
    pub fn query_pairs(&self) -> Vec<(String, String)> {
        match &self.query {
            None => Vec::new(),
            Some(q) => q
                .split('&')
                .filter(|p| !p.is_empty())
                .map(|p| match p.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => (String::new(), p.to_string()),
                })
                .collect(),
        }
    }

    /// Path segments, empty segments dropped.
    pub fn path_segments(&self) -> Vec<String> {
        self.path
            .split('/')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }
}

impl fmt::Display for UrlParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.host, self.path)?;
        if let Some(q) = &self.query {
            write!(f, "?{q}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registrable_domain_basic() {
        let psl = SuffixList::default();
        assert_eq!(psl.registrable_domain("www.example.com"), "example.com");
        assert_eq!(psl.registrable_domain("example.com"), "example.com");
        assert_eq!(psl.registrable_domain("a.b.tracker1.com"), "tracker1.com");
    }

    #[test]
    fn registrable_domain_multi_label_suffix() {
        let psl = SuffixList::default();
        assert_eq!(psl.registrable_domain("shop.example.co.uk"), "example.co.uk");
        assert_eq!(psl.registrable_domain("example.co.uk"), "example.co.uk");
    }

    #[test]
    fn registrable_domain_fallback_last_two_labels() {
        let psl = SuffixList::default();
        assert_eq!(psl.registrable_domain("a.b.weird.zz"), "weird.zz");
    }

    #[test]
    fn host_that_is_a_suffix_or_ip_is_kept() {
        let psl = SuffixList::default();
        assert_eq!(psl.registrable_domain("com"), "com");
        assert_eq!(psl.registrable_domain("10.0.0.1"), "10.0.0.1");
        assert_eq!(psl.registrable_domain("localhost"), "localhost");
    }

    #[test]
    fn strict_subdomain() {
        assert!(is_strict_subdomain("sub.example.com", "example.com"));
        assert!(!is_strict_subdomain("example.com", "example.com"));
        assert!(!is_strict_subdomain("badexample.com", "example.com"));
    }

    #[test]
    fn url_parts_tokenization() {
        let p = UrlParts::parse("http://t.com/a/b.js?x=1&y=dXNlcjE=&flag").unwrap();
        assert_eq!(p.path_segments(), vec!["a", "b.js"]);
        assert_eq!(
            p.query_pairs(),
            vec![
                ("x".to_string(), "1".to_string()),
                ("y".to_string(), "dXNlcjE=".to_string()),

                (String::new(), "flag".to_string()),
            ]
        );
    }

    #[test]
    fn unparseable_url_is_an_error() {
        assert!(UrlParts::parse("not a url").is_err());
    }
}
