//! ATS / Non-ATS ground truth from a deliberately small filter-rule grammar:
//! domain anchors (`||domain^`), plain substrings, and substrings gated on
//! third-party requests (`...$third-party`). No exception rules, so adding a
//! rule can only ever add ATS labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{SuffixList, UrlParts};
use crate::graph::{NodeId, NodeKind, PageGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterRule {
    DomainAnchor { pattern: String },
    Substring { pattern: String },
    SubstringThirdParty { pattern: String },
}

impl FilterRule {
    pub fn pattern(&self) -> &str {
        match self {
            FilterRule::DomainAnchor { pattern }
            | FilterRule::Substring { pattern }
            | FilterRule::SubstringThirdParty { pattern } => pattern,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: Vec<FilterRule>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("line {0}: invalid rule")]
    InvalidRule(usize),
}

fn valid_hostname_suffix(s: &str) -> bool {
    !s.is_empty()
        && s.split('.').all(|label| {
            !label.is_empty()
                && label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        })
}

/// Parses one rule per line. Blank lines and `!` comments are ignored.
pub fn parse_rules(text: &str) -> Result<RuleSet, RuleError> {
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('!') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("||") {
            let pattern = rest
                .strip_suffix('^')
                .ok_or(RuleError::InvalidRule(line_no))?;
            if !valid_hostname_suffix(pattern) {
                return Err(RuleError::InvalidRule(line_no));
            }
            rules.push(FilterRule::DomainAnchor { pattern: pattern.to_ascii_lowercase() });
        } else if let Some(pattern) = line.strip_suffix("$third-party") {
            if pattern.is_empty() {
                return Err(RuleError::InvalidRule(line_no));
            }
            rules.push(FilterRule::SubstringThirdParty { pattern: pattern.to_string() });
        } else if line.contains('$') {
            // Other filter options are out of this grammar.
            return Err(RuleError::InvalidRule(line_no));
        } else {
            rules.push(FilterRule::Substring { pattern: line.to_string() });
        }
    }
    Ok(RuleSet { rules })
}

/// True when any rule matches. Matching is order independent.
pub fn match_url(rules: &RuleSet, url: &str, is_third_party: bool) -> Result<bool, crate::domains::UnparseableUrl> {
    let parts = UrlParts::parse(url)?;
    let host = parts.host.to_ascii_lowercase();
    Ok(rules.rules.iter().any(|rule| match rule {
        FilterRule::DomainAnchor { pattern } => {
            host == *pattern || host.ends_with(&format!(".{pattern}"))
        }
        FilterRule::Substring { pattern } => url.contains(pattern.as_str()),
        FilterRule::SubstringThirdParty { pattern } => {
            is_third_party && url.contains(pattern.as_str())
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Rule(usize),
    Generator,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledNode {
    pub node_id: NodeId,
    pub ats: bool,
    pub source: LabelSource,
}

/// Labels every network node of the graph. URLs the parser rejects fall back
/// to Non-ATS and surface as diagnostics.
pub fn label_graph(graph: &PageGraph, rules: &RuleSet, psl: &SuffixList) -> (Vec<LabeledNode>, Vec<String>) {
    let first_party = graph.page.first_party.to_ascii_lowercase();
    let mut labels = Vec::new();
    let mut diagnostics = Vec::new();
    for node in graph.network_nodes() {
        let url = match &node.kind {
            NodeKind::Network { url, .. } => url,
            _ => unreachable!(),
        };
        let is_third_party = match UrlParts::parse(url) {
            Ok(parts) => psl.registrable_domain(&parts.host) != first_party,
            Err(_) => true,
        };
        match match_url(rules, url, is_third_party) {
            Ok(true) => {
                let idx = rules
                    .rules
                    .iter()
                    .position(|rule| matches_single(rule, url, is_third_party))
                    .expect("a rule matched");
                labels.push(LabeledNode { node_id: node.id, ats: true, source: LabelSource::Rule(idx) });
            }
            Ok(false) => labels.push(LabeledNode {
                node_id: node.id,
                ats: false,
                source: LabelSource::Unmatched,
            }),
            Err(err) => {
                diagnostics.push(format!("node {}: {err}", node.id));
                labels.push(LabeledNode {
                    node_id: node.id,
                    ats: false,
                    source: LabelSource::Unmatched,
                });
            }
        }
    }
    (labels, diagnostics)
}

fn matches_single(rule: &FilterRule, url: &str, is_third_party: bool) -> bool {
    let one = RuleSet { rules: vec![rule.clone()] };
    match_url(&one, url, is_third_party).unwrap_or(false)
}

/// CSV export: `node_id,label,source`.
pub fn labels_to_csv(labels: &[LabeledNode]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["node_id", "label", "source"]).expect("csv header");
    for l in labels {
        let source = match l.source {
            LabelSource::Rule(i) => format!("rule:{i}"),
            LabelSource::Generator => "generator".to_string(),
            LabelSource::Unmatched => "unmatched".to_string(),
        };
        w.write_record([
            l.node_id.to_string(),
            if l.ats { "1".to_string() } else { "0".to_string() },
            source,
        ])
        .expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv buffer")).expect("csv utf8")
}

pub fn labels_from_csv(text: &str) -> Result<Vec<LabeledNode>, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() < 3 {
            return Err("label rows need node_id,label,source".to_string());
        }
        let node_id: NodeId = record[0].parse().map_err(|_| "bad node_id".to_string())?;
        let ats = &record[1] == "1";
        let source = match &record[2] {
            "generator" => LabelSource::Generator,
            "unmatched" => LabelSource::Unmatched,
            s => LabelSource::Rule(
                s.strip_prefix("rule:")
                    .and_then(|i| i.parse().ok())
                    .ok_or_else(|| format!("bad source `{s}`"))?,
            ),
        };
        out.push(LabeledNode { node_id, ats, source });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::parse_trace_str;
    use crate::graph::{build_graph, GraphConfig};

    #[test]
    fn parse_basic_rule_forms() {
        let rs = parse_rules("||tracker1.com^\n! comment\n\n/sync$third-party\nbanner").unwrap();
        assert_eq!(rs.rules.len(), 3);
        assert_eq!(rs.rules[0], FilterRule::DomainAnchor { pattern: "tracker1.com".to_string() });
        assert_eq!(
            rs.rules[1],
            FilterRule::SubstringThirdParty { pattern: "/sync".to_string() }
        );
        assert_eq!(rs.rules[2], FilterRule::Substring { pattern: "banner".to_string() });
    }

    #[test]
    fn invalid_rules_are_rejected() {
        assert_eq!(parse_rules("||nocaret.com"), Err(RuleError::InvalidRule(1)));
        assert_eq!(parse_rules("x$badoption"), Err(RuleError::InvalidRule(1)));
        assert_eq!(parse_rules("||bad host^"), Err(RuleError::InvalidRule(1)));
    }

    #[test]
    fn domain_anchor_matches_subdomains() {
        let rs = parse_rules("||tracker1.com^").unwrap();
        assert!(match_url(&rs, "http://sub.tracker1.com/a", false).unwrap());
        assert!(match_url(&rs, "http://tracker1.com/a", false).unwrap());
        assert!(!match_url(&rs, "http://nottracker1.com/a", false).unwrap());
        assert!(!match_url(&rs, "http://tracker1.com.evil.net/a", false).unwrap());
    }

    #[test]
    fn third_party_gate() {
        let rs = parse_rules("/sync$third-party").unwrap();
        assert!(!match_url(&rs, "http://tracker2.com/sync", false).unwrap());
        assert!(match_url(&rs, "http://tracker2.com/sync", true).unwrap());
    }

    #[test]
    fn empty_ruleset_matches_nothing() {
        let rs = RuleSet::default();
        assert!(!match_url(&rs, "http://anything.com/x", true).unwrap());
    }

    #[test]
    fn fixture_labels_all_trackers() {
        let trace = parse_trace_str(include_str!("../tests/fixtures/code1_listing1.jsonl")).unwrap();
        let graph = build_graph(&trace, &GraphConfig { min_value_len: 5 });
        let rules = parse_rules("||tracker1.com^\n||tracker2.com^\n||tracker3.com^").unwrap();
        let (labels, diags) = label_graph(&graph, &rules, &SuffixList::default());
        assert!(diags.is_empty());
        assert_eq!(labels.len(), 5);
        assert!(labels.iter().all(|l| l.ats));
        let (labels, _) = label_graph(&graph, &RuleSet::default(), &SuffixList::default());
        assert!(labels.iter().all(|l| !l.ats));
    }

    #[test]
    fn adding_rules_never_flips_ats_off() {
        let trace = parse_trace_str(include_str!("../tests/fixtures/code1_listing1.jsonl")).unwrap();
        let graph = build_graph(&trace, &GraphConfig { min_value_len: 5 });
        let psl = SuffixList::default();
        let small = parse_rules("||tracker2.com^").unwrap();
        let big = parse_rules("||tracker2.com^\n||tracker3.com^\ntrack").unwrap();
        let (before, _) = label_graph(&graph, &small, &psl);
        let (after, _) = label_graph(&graph, &big, &psl);
        for (b, a) in before.iter().zip(after.iter()) {
            assert!(!b.ats || a.ats);
        }
    }

    #[test]
    fn labels_csv_roundtrip() {
        let labels = vec![
            LabeledNode { node_id: 1, ats: true, source: LabelSource::Rule(0) },
            LabeledNode { node_id: 4, ats: false, source: LabelSource::Unmatched },
        ];
        let csv = labels_to_csv(&labels);
        assert_eq!(labels_from_csv(&csv).unwrap(), labels);
    }
}
