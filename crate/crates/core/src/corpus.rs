//! Deterministic synthetic page-load traces with known ATS/Non-ATS ground
//! truth. Trackers set identifier cookies, carry the identifiers in beacon
//! URLs, and sync them across domains via redirects and query strings; benign
//! resources include lookalikes whose URLs contain ad keywords so content
//! features alone cannot separate the classes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::eventlog::{
    Actor, ActorKind, Creator, CreatorKind, EventKind, Initiator, InitiatorKind, PageLoadEvent,
    PageTrace, ResourceType, StorageKind, StorageWrite,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Range {
    pub min: u32,
    pub max: u32,
}

impl Range {
    pub const fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        if self.max <= self.min {
            return self.min as usize;
        }
        rng.gen_range(self.min..=self.max) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_pages: usize,
    pub seed: u64,
    #[serde(default = "d_benign")]
    pub benign_resources: Range,
    #[serde(default = "d_trackers")]
    pub tracker_domains: Range,
    #[serde(default = "d_redirect_pairs")]
    pub sync_redirect_pairs: Range,
    #[serde(default = "d_query_flows")]
    pub sync_query_flows: Range,
    #[serde(default = "d_local_writers")]
    pub local_storage_writers: Range,
    #[serde(default = "d_lookalikes")]
    pub benign_lookalikes: Range,
}

fn d_benign() -> Range {
    Range::new(6, 12)
}
fn d_trackers() -> Range {
    Range::new(2, 4)
}
fn d_redirect_pairs() -> Range {
    Range::new(1, 2)
}
fn d_query_flows() -> Range {
    Range::new(1, 2)
}
fn d_local_writers() -> Range {
    Range::new(0, 2)
}
fn d_lookalikes() -> Range {
    Range::new(2, 4)
}

impl CorpusSpec {
    pub fn small(n_pages: usize, seed: u64) -> Self {
        Self {
            n_pages,
            seed,
            benign_resources: d_benign(),
            tracker_domains: d_trackers(),
            sync_redirect_pairs: d_redirect_pairs(),
            sync_query_flows: d_query_flows(),
            local_storage_writers: d_local_writers(),
            benign_lookalikes: d_lookalikes(),
        }
    }
}

/// Generator ground truth: every request id labeled, plus the page's tracker
/// domains (the auto-generated filter rules anchor on these).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: BTreeMap<String, bool>,
    pub tracker_domains: Vec<String>,
}

const IDENTIFIER_LEN: usize = 16;
const BEACON_PATHS: &[&str] = &["pixel", "collect", "track", "beacon", "sync", "b"];
const BENIGN_EXTENSIONS: &[(&str, ResourceType, &str)] = &[
    ("img", ResourceType::Image, "png"),
    ("img", ResourceType::Image, "jpg"),
    ("link", ResourceType::Stylesheet, "css"),
    ("script", ResourceType::Script, "js"),
    ("video", ResourceType::Other, "mp4"),
];
const LOOKALIKE_WORDS: &[&str] = &["banner", "ads", "sponsor", "advert", "track"];

fn token(rng: &mut ChaCha8Rng, len: usize) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect()
}

fn label(rng: &mut ChaCha8Rng, len: usize) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect()
}

struct PageBuilder {
    events: Vec<PageLoadEvent>,
    ts: u64,
    next_element: usize,
    next_request: usize,
    next_script: usize,
    labels: BTreeMap<String, bool>,
}

struct Tracker {
    domain: String,
    uid_key: String,
    identifier: String,
    script_id: String,
}

impl PageBuilder {
    fn new() -> Self {
        Self { events: Vec::new(), ts: 0, next_element: 0, next_request: 0, next_script: 0, labels: BTreeMap::new() }
    }

    fn push(&mut self, kind: EventKind) {
        self.ts += 1;
        self.events.push(PageLoadEvent { ts: self.ts, kind });
    }

    fn element(&mut self, tag: &str, creator: Creator) -> String {
        self.next_element += 1;
        let id = format!("e{}", self.next_element);
        self.push(EventKind::ElementCreated { element_id: id.clone(), tag: tag.to_string(), creator });
        id
    }

    fn request(
        &mut self,
        url: &str,
        resource_type: ResourceType,
        initiator: Initiator,
        cookie_keys: Vec<String>,
        ats: bool,
    ) -> String {
        self.next_request += 1;
        let id = format!("r{}", self.next_request);
        self.push(EventKind::Request {
            request_id: id.clone(),
            url: url.to_string(),
            resource_type,
            initiator,
            cookie_keys,
        });
        self.labels.insert(id.clone(), ats);
        id
    }

    fn respond(&mut self, request_id: &str, set_storage: Vec<StorageWrite>) {
        self.push(EventKind::Response { request_id: request_id.to_string(), status: 200, set_storage });
    }

    fn redirect(&mut self, request_id: &str, to_url: &str, ats: bool) -> String {
        self.next_request += 1;
        let id = format!("r{}", self.next_request);
        self.push(EventKind::Redirect {
            request_id: request_id.to_string(),
            new_request_id: id.clone(),
            to_url: to_url.to_string(),
        });
        self.labels.insert(id.clone(), ats);
        id
    }

    fn script(&mut self, url: Option<&str>, parent_element: Option<&str>) -> String {
        self.next_script += 1;
        let id = format!("s{}", self.next_script);
        self.push(EventKind::ScriptSource {
            script_id: id.clone(),
            url: url.map(str::to_string),
            parent_element: parent_element.map(str::to_string),
            is_eval: false,
        });
        id
    }

    /// Parser-inserted script element plus its fetch and execution.
    fn script_resource(&mut self, url: &str, ats: bool) -> String {
        let elem = self.element("script", Creator { kind: CreatorKind::Parser, id: None });
        let req = self.request(
            url,
            ResourceType::Script,
            Initiator { kind: InitiatorKind::Element, id: Some(elem.clone()) },
            vec![],
            ats,
        );
        self.respond(&req, vec![]);
        self.script(Some(url), Some(&elem))
    }
}

/// Generates one page trace plus its ground truth, deterministically from
/// `(spec.seed, page_index)`.
pub fn generate_page(spec: &CorpusSpec, page_index: usize) -> (PageTrace, GroundTruth) {
    let mut rng = seed::stream(spec.seed, "page", page_index as u64);
    let first_party = format!("site{}-{}.com", page_index, label(&mut rng, 4));
    let page_url = format!("http://www.{first_party}/");
    let mut b = PageBuilder::new();

    // First-party loader script; some benign content hangs off it so script
    // ancestry alone does not separate the classes.
    let loader_url = format!("http://www.{first_party}/js/app-{}.js", token(&mut rng, 6));
    let loader = b.script_resource(&loader_url, false);

    // Trackers: identifier cookie, beacons carrying the identifier.
    let n_trackers = spec.tracker_domains.sample(&mut rng);
    let mut trackers: Vec<Tracker> = Vec::new();
    for _ in 0..n_trackers {
        let domain = format!("trk-{}.com", label(&mut rng, 6));
        let uid_key = format!("uid_{}", label(&mut rng, 4));
        let identifier = token(&mut rng, IDENTIFIER_LEN);
        let tag_path = if rng.gen_bool(0.5) {
            format!("js/{}-{}.js", BEACON_PATHS[rng.gen_range(0..BEACON_PATHS.len())], token(&mut rng, 5))
        } else {
            format!("js/tag-{}.js", token(&mut rng, 5))
        };
        let script_id = b.script_resource(&format!("http://{domain}/{tag_path}"), true);
        b.push(EventKind::StorageSet {
            actor: Actor { kind: ActorKind::Script, id: script_id.clone() },
            storage: StorageKind::Cookie,
            key: uid_key.clone(),
            value: identifier.clone(),
        });
        let beacons = rng.gen_range(1..=3);
        for _ in 0..beacons {
            let elem = b.element(
                "img",
                Creator { kind: CreatorKind::Script, id: Some(script_id.clone()) },
            );
            let path = BEACON_PATHS[rng.gen_range(0..BEACON_PATHS.len())];
            let url = format!(
                "http://{domain}/{path}?uid={identifier}&ref={first_party}&cb={}",
                token(&mut rng, 6)
            );
            let req = b.request(
                &url,
                ResourceType::Image,
                Initiator { kind: InitiatorKind::Element, id: Some(elem) },
                vec![uid_key.clone()],
                true,
            );
            b.respond(&req, vec![]);
        }
        trackers.push(Tracker { domain, uid_key, identifier, script_id });
    }

    // Cookie syncing via redirect: tracker A's pixel bounces to tracker B with
    // A's identifier in the target URL; B sets its own cookie on the response.
    if trackers.len() >= 2 {
        for _ in 0..spec.sync_redirect_pairs.sample(&mut rng) {
            let a = rng.gen_range(0..trackers.len());
            let mut bidx = rng.gen_range(0..trackers.len() - 1);
            if bidx >= a {
                bidx += 1;
            }
            let (src, dst) = (&trackers[a], &trackers[bidx]);
            let elem = b.element(
                "img",
                Creator { kind: CreatorKind::Script, id: Some(src.script_id.clone()) },
            );
            let sync_url = format!(
                "http://{}/sync?uid={}&cb={}",
                src.domain,
                src.identifier,
                token(&mut rng, 6)
            );
            let req = b.request(
                &sync_url,
                ResourceType::Image,
                Initiator { kind: InitiatorKind::Element, id: Some(elem) },
                vec![src.uid_key.clone()],
                true,
            );
            let target_url = format!(
                "http://{}/setuid?partner={}&cb={}",
                dst.domain,
                src.identifier,
                token(&mut rng, 6)
            );
            let target = b.redirect(&req, &target_url, true);
            b.respond(
                &target,
                vec![StorageWrite {
                    storage: StorageKind::Cookie,
                    key: dst.uid_key.clone(),
                    value: dst.identifier.clone(),
                }],
            );
        }

        // Cookie syncing via query string: A reads its cookie and XHRs it to B.
        for _ in 0..spec.sync_query_flows.sample(&mut rng) {
            let a = rng.gen_range(0..trackers.len());
            let mut bidx = rng.gen_range(0..trackers.len() - 1);
            if bidx >= a {
                bidx += 1;
            }
            let (src, dst) = (&trackers[a], &trackers[bidx]);
            b.push(EventKind::StorageGet {
                actor: Actor { kind: ActorKind::Script, id: src.script_id.clone() },
                storage: StorageKind::Cookie,
                key: src.uid_key.clone(),
                value: src.identifier.clone(),
            });
            let url = format!(
                "http://{}/sync?puid={}&cb={}",
                dst.domain,
                src.identifier,
                token(&mut rng, 6)
            );
            let req = b.request(
                &url,
                ResourceType::Xhr,
                Initiator { kind: InitiatorKind::Script, id: Some(src.script_id.clone()) },
                vec![],
                true,
            );
            b.respond(&req, vec![]);
        }
    }

    // Plain benign resources, a mix of first-party and CDN hosts, some
    // inserted by the loader script.
    for _ in 0..spec.benign_resources.sample(&mut rng) {
        benign_resource(&mut b, &mut rng, &first_party, &loader, None);
    }

    // Benign lookalikes: ad keywords (and sometimes ad-sized dimensions) in
    // otherwise inert URLs.
    for _ in 0..spec.benign_lookalikes.sample(&mut rng) {
        let word = LOOKALIKE_WORDS[rng.gen_range(0..LOOKALIKE_WORDS.len())];
        benign_resource(&mut b, &mut rng, &first_party, &loader, Some(word));
    }

    // Benign localStorage writers: first-party preference scripts.
    for _ in 0..spec.local_storage_writers.sample(&mut rng) {
        let url = format!("http://www.{first_party}/js/prefs-{}.js", token(&mut rng, 5));
        let script = b.script_resource(&url, false);
        let key = format!("prefs_{}", label(&mut rng, 4));
        let value = token(&mut rng, 10);
        b.push(EventKind::StorageSet {
            actor: Actor { kind: ActorKind::Script, id: script.clone() },
            storage: StorageKind::Local,
            key: key.clone(),
            value: value.clone(),
        });
        if rng.gen_bool(0.5) {
            b.push(EventKind::StorageGet {
                actor: Actor { kind: ActorKind::Script, id: script },
                storage: StorageKind::Local,
                key,
                value,
            });
        }
    }

    let trace = PageTrace { page_url, first_party, events: b.events };
    let truth = GroundTruth {
        labels: b.labels,
        tracker_domains: trackers.iter().map(|t| t.domain.clone()).collect(),
    };
    (trace, truth)
}

fn benign_resource(
    b: &mut PageBuilder,
    rng: &mut ChaCha8Rng,
    first_party: &str,
    loader: &str,
    lookalike_word: Option<&str>,
) {
    let (tag, resource_type, ext) = BENIGN_EXTENSIONS[rng.gen_range(0..BENIGN_EXTENSIONS.len())];
    let host = if rng.gen_bool(0.7) {
        if rng.gen_bool(0.5) {
            format!("www.{first_party}")
        } else {
            first_party.to_string()
        }
    } else {
        format!("cdn-{}.com", label(rng, 5))
    };
    let name = match lookalike_word {
        Some(word) => format!("{word}-{}", token(rng, 6)),
        None => token(rng, 8),
    };
    let query = if lookalike_word.is_some() && rng.gen_bool(0.3) {
        "?size=300x250".to_string()
    } else if rng.gen_bool(0.3) {
        format!("?v={}", rng.gen_range(1..=9))
    } else {
        String::new()
    };
    let url = format!("http://{host}/assets/{name}.{ext}{query}");
    let creator = if rng.gen_bool(0.4) {
        Creator { kind: CreatorKind::Script, id: Some(loader.to_string()) }
    } else {
        Creator { kind: CreatorKind::Parser, id: None }
    };
    let elem = b.element(tag, creator);
    let req = b.request(
        &url,
        resource_type,
        Initiator { kind: InitiatorKind::Element, id: Some(elem) },
        vec![],
        false,
    );
    b.respond(&req, vec![]);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestPage {
    pub index: usize,
    pub file: String,
    pub page_url: String,
    pub first_party: String,
    pub tracker_domains: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: CorpusSpec,
    pub pages: Vec<ManifestPage>,
}

/// In-memory corpus: page traces, ground truth, auto-generated filter rules.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub pages: Vec<(PageTrace, GroundTruth)>,
    pub rules_text: String,
}

/// Generates the whole corpus. Filter rules carry one domain anchor per
/// tracker domain seen anywhere in the corpus, so labeling a page graph with
/// them reproduces the generator's ground truth.
pub fn generate_corpus(spec: &CorpusSpec) -> Corpus {
    let mut pages = Vec::with_capacity(spec.n_pages);
    let mut manifest_pages = Vec::with_capacity(spec.n_pages);
    let mut domains: std::collections::BTreeSet<String> = Default::default();
    for i in 0..spec.n_pages {
        let (trace, truth) = generate_page(spec, i);
        domains.extend(truth.tracker_domains.iter().cloned());
        manifest_pages.push(ManifestPage {
            index: i,
            file: format!("pages/page_{i}.jsonl"),
            page_url: trace.page_url.clone(),
            first_party: trace.first_party.clone(),
            tracker_domains: truth.tracker_domains.clone(),
        });
        pages.push((trace, truth));
    }
    let rules_text = domains
        .iter()
        .map(|d| format!("||{d}^\n"))
        .collect::<String>();
    Corpus {
        manifest: Manifest { spec: spec.clone(), pages: manifest_pages },
        pages,
        rules_text,
    }
}
