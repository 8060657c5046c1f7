//! Page-load trace format: a JSONL file with one page header line followed by
//! timestamped events for requests, responses, redirects, scripts, elements,
//! and storage access.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceType {
    Script,
    Image,
    Iframe,
    Xhr,
    Stylesheet,
    Other,
}

impl ResourceType {
    pub const ALL: [ResourceType; 6] = [
        ResourceType::Script,
        ResourceType::Image,
        ResourceType::Iframe,
        ResourceType::Xhr,
        ResourceType::Stylesheet,
        ResourceType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceType::Script => "script",
            ResourceType::Image => "image",
            ResourceType::Iframe => "iframe",
            ResourceType::Xhr => "xhr",
            ResourceType::Stylesheet => "stylesheet",
            ResourceType::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageKind {
    Cookie,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitiatorKind {
    Parser,
    Script,
    Element,
}

/// Who triggered a network request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Initiator {
    pub kind: InitiatorKind,
    pub id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CreatorKind {
    Parser,
    Script,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Creator {
    pub kind: CreatorKind,
    pub id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    Script,
    Request,
}

/// Script or request performing a storage access.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub kind: ActorKind,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageWrite {
    pub storage: StorageKind,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Request {
        request_id: String,
        url: String,
        resource_type: ResourceType,
        initiator: Initiator,
        cookie_keys: Vec<String>,
    },
    Response {
        request_id: String,
        status: u32,
        set_storage: Vec<StorageWrite>,
    },
    Redirect {
        request_id: String,
        new_request_id: String,
        to_url: String,
    },
    ScriptSource {
        script_id: String,
        url: Option<String>,
        parent_element: Option<String>,
        is_eval: bool,
    },
    ElementCreated {
        element_id: String,
        tag: String,
        creator: Creator,
    },
    ElementModified {
        element_id: String,
        script_id: String,
        attribute: String,
    },
    StorageSet {
        actor: Actor,
        storage: StorageKind,
        key: String,
        value: String,
    },
    StorageGet {
        actor: Actor,
        storage: StorageKind,
        key: String,
        value: String,
    },
}

/// One record of a page-load trace. `ts` is a logical sequence index, not
/// wall-clock time; it must be nondecreasing within a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageLoadEvent {
    pub ts: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum TraceLine {
    Page {
        page_url: String,
        first_party: String,
    },
    Event(PageLoadEvent),
}

/// A full page load: header metadata plus the ordered event list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageTrace {
    pub page_url: String,
    pub first_party: String,
    pub events: Vec<PageLoadEvent>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {0}: malformed JSON")]
    MalformedLine(usize),
    #[error("line {line}: schema violation in field `{field}`")]
    SchemaViolation { line: usize, field: String },
    #[error("line {line}: dangling reference to `{id}`")]
    DanglingReference { line: usize, id: String },
    #[error("line {0}: expected page header record")]
    MissingHeader(usize),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticRule {
    DuplicateId,
    DanglingReference,
    NonMonotonicTimestamp,
}

impl DiagnosticRule {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticRule::DuplicateId => "DuplicateId",
            DiagnosticRule::DanglingReference => "DanglingReference",
            DiagnosticRule::NonMonotonicTimestamp => "NonMonotonicTimestamp",
        }
    }
}

/// One invariant violation found by [`validate_trace`]. `line` is the JSONL
/// line the offending event would occupy (header is line 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub rule: DiagnosticRule,
    pub detail: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.rule.as_str(), self.detail)
    }
}

struct IdTable {
    requests: std::collections::HashSet<String>,
    elements: std::collections::HashSet<String>,
    scripts: std::collections::HashSet<String>,
}

impl IdTable {
    fn new() -> Self {
        Self {
            requests: Default::default(),
            elements: Default::default(),
            scripts: Default::default(),
        }
    }

    /// Registers the ids an event declares and returns the first reference it
    /// makes that has not been declared yet, if any. Declaration happens after
    /// the reference check so self-references cannot slip through.
    fn check(&mut self, kind: &EventKind) -> Result<(), String> {
        match kind {
            EventKind::Request { request_id, initiator, .. } => {
                match (initiator.kind, &initiator.id) {
                    (InitiatorKind::Script, Some(id)) if !self.scripts.contains(id) => {
                        return Err(id.clone())
                    }
                    (InitiatorKind::Element, Some(id)) if !self.elements.contains(id) => {
                        return Err(id.clone())
                    }
                    _ => {}
                }
                self.requests.insert(request_id.clone());
            }
            EventKind::Response { request_id, .. } => {
                if !self.requests.contains(request_id) {
                    return Err(request_id.clone());
                }
            }
            EventKind::Redirect { request_id, new_request_id, .. } => {
                if !self.requests.contains(request_id) {
                    return Err(request_id.clone());
                }
                self.requests.insert(new_request_id.clone());
            }
            EventKind::ScriptSource { script_id, parent_element, .. } => {
                if let Some(parent) = parent_element {
                    if !self.elements.contains(parent) {
                        return Err(parent.clone());
                    }
                }
                self.scripts.insert(script_id.clone());
            }
            EventKind::ElementCreated { element_id, creator, .. } => {
                if let (CreatorKind::Script, Some(id)) = (creator.kind, &creator.id) {
                    if !self.scripts.contains(id) {
                        return Err(id.clone());
                    }
                }
                self.elements.insert(element_id.clone());
            }
            EventKind::ElementModified { element_id, script_id, .. } => {
                if !self.elements.contains(element_id) {
                    return Err(element_id.clone());
                }
                if !self.scripts.contains(script_id) {
                    return Err(script_id.clone());
                }
            }
            EventKind::StorageSet { actor, .. } | EventKind::StorageGet { actor, .. } => {
                let known = match actor.kind {
                    ActorKind::Script => self.scripts.contains(&actor.id),
                    ActorKind::Request => self.requests.contains(&actor.id),
                };
                if !known {
                    return Err(actor.id.clone());
                }
            }
        }
        Ok(())
    }

    /// Ids an event declares, for duplicate detection.
    fn declared(kind: &EventKind) -> Option<(&'static str, &str)> {
        match kind {
            EventKind::Request { request_id, .. } => Some(("request", request_id)),
            EventKind::Redirect { new_request_id, .. } => Some(("request", new_request_id)),
            EventKind::ScriptSource { script_id, .. } => Some(("script", script_id)),
            EventKind::ElementCreated { element_id, .. } => Some(("element", element_id)),
            _ => None,
        }
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<TraceLine, ParseError> {
    let mut de = serde_json::Deserializer::from_str(line);
    match serde_path_to_error::deserialize::<_, TraceLine>(&mut de) {
        Ok(v) => Ok(v),
        Err(err) => {
            let inner = err.inner();
            if inner.is_syntax() || inner.is_eof() {
                Err(ParseError::MalformedLine(line_no))
            } else {
                // Tagged enums buffer their content, so the error path often
                // ends at the root; recover the field name from the message.
                let mut field = err.path().to_string();
                if field == "." || field.is_empty() {
                    let msg = inner.to_string();
                    field = msg
                        .split('`')
                        .nth(1)
                        .map(str::to_string)
                        .unwrap_or_else(|| msg.clone());
                }
                Err(ParseError::SchemaViolation { line: line_no, field })
            }
        }
    }
}

/// Parses a JSONL byte stream into a [`PageTrace`]. The first line must be a
/// page header; blank lines are ignored. Referential integrity of ids is
/// enforced here; softer invariants (duplicates, timestamp order) surface as
/// diagnostics from [`validate_trace`] instead.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<PageTrace, ParseError> {
    let mut trace: Option<PageTrace> = None;
    let mut ids = IdTable::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| ParseError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match (parse_line(line_no, &line)?, &mut trace) {
            (TraceLine::Page { page_url, first_party }, slot @ None) => {
                *slot = Some(PageTrace { page_url, first_party, events: Vec::new() });
            }
            (TraceLine::Page { .. }, Some(_)) => {
                return Err(ParseError::SchemaViolation {
                    line: line_no,
                    field: "record".to_string(),
                })
            }
            (TraceLine::Event(ev), Some(trace)) => {
                if let Err(id) = ids.check(&ev.kind) {
                    return Err(ParseError::DanglingReference { line: line_no, id });
                }
                trace.events.push(ev);
            }
            (TraceLine::Event(_), None) => return Err(ParseError::MissingHeader(line_no)),
        }
    }
    trace.ok_or(ParseError::MissingHeader(1))
}

/// Parses a trace held in memory.
pub fn parse_trace_str(text: &str) -> Result<PageTrace, ParseError> {
    parse_trace(std::io::Cursor::new(text.as_bytes()))
}

/// Checks every trace invariant and returns one diagnostic per violation.
/// An empty result means the trace is well formed.
pub fn validate_trace(trace: &PageTrace) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut ids = IdTable::new();
    let mut seen: std::collections::HashSet<(&'static str, String)> = Default::default();
    let mut last_ts: Option<u64> = None;
    for (i, ev) in trace.events.iter().enumerate() {
        let line = i + 2;
        if let Some((space, id)) = IdTable::declared(&ev.kind) {
            if !seen.insert((space, id.to_string())) {
                out.push(Diagnostic {
                    line,
                    rule: DiagnosticRule::DuplicateId,
                    detail: format!("{space} id `{id}` redeclared"),
                });
            }
        }
        if let Err(id) = ids.check(&ev.kind) {
            out.push(Diagnostic {
                line,
                rule: DiagnosticRule::DanglingReference,
                detail: format!("reference to undeclared id `{id}`"),
            });
        }
        if let Some(prev) = last_ts {
            if ev.ts < prev {
                out.push(Diagnostic {
                    line,
                    rule: DiagnosticRule::NonMonotonicTimestamp,
                    detail: format!("ts {} after ts {prev}", ev.ts),
                });
            }
        }
        last_ts = Some(ev.ts);
    }
    out
}

/// Checks that the header's `first_party` is the registrable domain of
/// `page_url` under the given suffix list.
pub fn check_first_party(
    trace: &PageTrace,
    psl: &crate::domains::SuffixList,
) -> Result<(), String> {
    let parts = crate::domains::UrlParts::parse(&trace.page_url)
        .map_err(|e| format!("page_url: {e}"))?;
    let registrable = psl.registrable_domain(&parts.host);
    if registrable == trace.first_party.to_ascii_lowercase() {
        Ok(())
    } else {
        Err(format!(
            "first_party `{}` is not the registrable domain `{registrable}` of the page url",
            trace.first_party
        ))
    }
}

/// Serializes a trace back to the JSONL wire format.
pub fn write_jsonl(trace: &PageTrace) -> String {
    let mut out = String::new();
    let header = TraceLine::Page {
        page_url: trace.page_url.clone(),
        first_party: trace.first_party.clone(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for ev in &trace.events {
        let line = TraceLine::Event(ev.clone());
        out.push_str(&serde_json::to_string(&line).expect("event serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> &'static str {
        r#"{"record":"page","page_url":"http://www.example.com/","first_party":"example.com"}"#
    }

    #[test]
    fn header_only_trace_is_empty() {
        let t = parse_trace_str(header()).unwrap();
        assert_eq!(t.page_url, "http://www.example.com/");
        assert_eq!(t.first_party, "example.com");
        assert!(t.events.is_empty());
        assert!(validate_trace(&t).is_empty());
    }

    #[test]
    fn missing_header_is_rejected() {
        let text = r#"{"record":"event","kind":"element_created","ts":1,"element_id":"e1","tag":"img","creator":{"kind":"parser","id":null}}"#;
        assert_eq!(parse_trace_str(text), Err(ParseError::MissingHeader(1)));
        assert_eq!(parse_trace_str(""), Err(ParseError::MissingHeader(1)));
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{}\n{{not json", header());
        assert_eq!(parse_trace_str(&text), Err(ParseError::MalformedLine(2)));
    }

    #[test]
    fn schema_violation_names_field() {
        let text = format!(
            "{}\n{}",
            header(),
            r#"{"record":"event","kind":"request","ts":1,"request_id":"r1","resource_type":"script","initiator":{"kind":"parser","id":null},"cookie_keys":[]}"#
        );
        match parse_trace_str(&text) {
            Err(ParseError::SchemaViolation { line: 2, field }) => {
                assert!(field.contains("url"), "unexpected field path: {field}")
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn response_to_unknown_request_is_dangling() {
        let text = format!(
            "{}\n{}",
            header(),
            r#"{"record":"event","kind":"response","ts":1,"request_id":"ghost","status":200,"set_storage":[]}"#
        );
        assert_eq!(
            parse_trace_str(&text),
            Err(ParseError::DanglingReference { line: 2, id: "ghost".to_string() })
        );
    }

    #[test]
    fn validate_flags_duplicates_and_timestamps() {
        let req = |id: &str, ts: u64| PageLoadEvent {
            ts,
            kind: EventKind::Request {
                request_id: id.to_string(),
                url: "http://a.com/x".to_string(),
                resource_type: ResourceType::Image,
                initiator: Initiator { kind: InitiatorKind::Parser, id: None },
                cookie_keys: vec![],
            },
        };
        let trace = PageTrace {
            page_url: "http://www.example.com/".to_string(),
            first_party: "example.com".to_string(),
            events: vec![req("r1", 1), req("r1", 3), req("r2", 2)],
        };
        let diags = validate_trace(&trace);
        assert_eq!(diags.len(), 2);
        assert_eq!(diags[0].rule, DiagnosticRule::DuplicateId);
        assert_eq!(diags[0].line, 3);
        assert_eq!(diags[1].rule, DiagnosticRule::NonMonotonicTimestamp);
        assert_eq!(diags[1].line, 4);
    }

    #[test]
    fn fixture_trace_event_counts() {
        let trace =
            parse_trace_str(include_str!("../tests/fixtures/code1_listing1.jsonl")).unwrap();
        assert!(validate_trace(&trace).is_empty());
        let count = |f: &dyn Fn(&EventKind) -> bool| {
            trace.events.iter().filter(|e| f(&e.kind)).count()
        };
        let requests = count(&|k| matches!(k, EventKind::Request { .. }));
        let redirects = count(&|k| matches!(k, EventKind::Redirect { .. }));
        // Redirects introduce one network request each.
        assert_eq!(requests + redirects, 5);
        assert_eq!(redirects, 1);
        assert_eq!(count(&|k| matches!(k, EventKind::ScriptSource { .. })), 2);
        assert_eq!(count(&|k| matches!(k, EventKind::StorageGet { .. })), 1);
        let sets = trace
            .events
            .iter()
            .filter(|e| match &e.kind {
                EventKind::StorageSet { .. } => true,
                EventKind::Response { set_storage, .. } => !set_storage.is_empty(),
                _ => false,
            })
            .count();
        assert!(sets >= 1);
        assert!(check_first_party(&trace, &crate::domains::SuffixList::default()).is_ok());
    }

    #[test]
    fn first_party_mismatch_is_reported() {
        let trace = PageTrace {
            page_url: "http://www.example.com/".to_string(),
            first_party: "other.com".to_string(),
            events: vec![],
        };
        assert!(check_first_party(&trace, &crate::domains::SuffixList::default()).is_err());
    }

    #[test]
    fn roundtrip_preserves_structure() {
        let text = format!(
            "{}\n{}\n{}",
            header(),
            r#"{"record":"event","kind":"element_created","ts":1,"element_id":"e1","tag":"script","creator":{"kind":"parser","id":null}}"#,
            r#"{"record":"event","kind":"request","ts":2,"request_id":"r1","url":"http://t.com/a.js","resource_type":"script","initiator":{"kind":"element","id":"e1"},"cookie_keys":["uid"]}"#
        );
        let t1 = parse_trace_str(&text).unwrap();
        let t2 = parse_trace_str(&write_jsonl(&t1)).unwrap();
        assert_eq!(t1, t2);
    }
}
