//! Feature extraction for network nodes: content features of the URL itself,
//! structural features of the page graph, and flow features of storage access,
//! redirect chains, and shared-identifier edges.
//!
//! Script activity is attributed to the network node that delivered the
//! script: storage accesses, initiated requests, and common-storage edges of a
//! script also count toward its source request. Features over the flow
//! subgraph are positional and carry no attribution.

mod stats;

pub use stats::View;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domains::{is_strict_subdomain, SuffixList, UrlParts};
use crate::eventlog::{ResourceType, StorageKind};
use crate::graph::{EdgeKind, NodeId, NodeKind, PageGraph};

pub const CONTENT_FEATURES: &[&str] = &[
    "content_type_script",
    "content_type_image",
    "content_type_iframe",
    "content_type_xhr",
    "content_type_stylesheet",
    "content_type_other",
    "content_ad_keyword",
    "content_ad_dimensions",
    "content_valid_query",
    "content_url_length",
    "content_third_party",
    "content_first_party_subdomain",
    "content_base_domain_in_query",
    "content_semicolon_in_query",
];

pub const STRUCT_FEATURES: &[&str] = &[
    "struct_graph_nodes",
    "struct_graph_edges",
    "struct_node_edge_ratio",
    "struct_in_degree",
    "struct_out_degree",
    "struct_total_degree",
    "struct_avg_degree_connectivity",
    "struct_closeness",
    "struct_eccentricity",
    "struct_ascendants_html",
    "struct_ascendants_network",
    "struct_ascendants_script",
    "struct_ascendants_storage",
    "struct_ascendant_sets_storage",
    "struct_ascendant_is_eval",
    "struct_descendant_of_script",
    "struct_parent_is_eval_script",
];

/// Structural rows only present in the AdGraph variants.
pub const ADGRAPH_EXTRA_FEATURES: &[&str] = &[
    "adg_sibling_count",
    "adg_parent_sibling_count",
    "adg_modifications",
    "adg_parent_modifications",
    "adg_parents_html",
    "adg_parents_network",
    "adg_parents_script",
    "adg_parents_storage",
    "adg_parent_in_degree",
    "adg_parent_out_degree",
    "adg_parent_total_degree",
    "adg_parent_avg_degree_connectivity",
];

pub const FLOW_FEATURES: &[&str] = &[
    "flow_cookie_sets",
    "flow_cookie_gets",
    "flow_local_sets",
    "flow_local_gets",
    "flow_requests_sent",
    "flow_requests_received",
    "flow_redirects_sent",
    "flow_redirects_received",
    "flow_redirect_depth",
    "flow_shared_in",
    "flow_shared_out",
    "flow_common_storage",
    "flow_shared_ancestors",
    "flow_graph_nodes",
    "flow_graph_edges",
    "flow_node_edge_ratio",
    "flow_in_degree",
    "flow_out_degree",
    "flow_total_degree",
    "flow_avg_degree_connectivity",
    "flow_closeness",
    "flow_eccentricity",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSetId {
    /// Structural + content on the page graph, AdGraph-style.
    AdgraphFull,
    /// Structural only, AdGraph-style.
    AdgraphStructural,
    /// Structural + flow + content.
    WebgraphFull,
    /// Structural only.
    WebgraphNoflow,
    /// Structural + flow, no content.
    WebgraphFlowonly,
}

impl FeatureSetId {
    pub const ALL: [FeatureSetId; 5] = [
        FeatureSetId::AdgraphFull,
        FeatureSetId::AdgraphStructural,
        FeatureSetId::WebgraphFull,
        FeatureSetId::WebgraphNoflow,
        FeatureSetId::WebgraphFlowonly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSetId::AdgraphFull => "adgraph_full",
            FeatureSetId::AdgraphStructural => "adgraph_structural",
            FeatureSetId::WebgraphFull => "webgraph_full",
            FeatureSetId::WebgraphNoflow => "webgraph_noflow",
            FeatureSetId::WebgraphFlowonly => "webgraph_flowonly",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s)
    }

    /// Ordered feature names of this set.
    pub fn feature_names(self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = STRUCT_FEATURES.to_vec();
        match self {
            FeatureSetId::AdgraphFull => {
                names.extend(ADGRAPH_EXTRA_FEATURES);
                names.extend(CONTENT_FEATURES);
            }
            FeatureSetId::AdgraphStructural => names.extend(ADGRAPH_EXTRA_FEATURES),
            FeatureSetId::WebgraphFull => {
                names.extend(FLOW_FEATURES);
                names.extend(CONTENT_FEATURES);
            }
            FeatureSetId::WebgraphNoflow => {}
            FeatureSetId::WebgraphFlowonly => names.extend(FLOW_FEATURES),
        }
        names
    }

    pub fn has_content(self) -> bool {
        matches!(self, FeatureSetId::AdgraphFull | FeatureSetId::WebgraphFull)
    }

    pub fn has_flow(self) -> bool {
        matches!(self, FeatureSetId::WebgraphFull | FeatureSetId::WebgraphFlowonly)
    }

    fn has_adgraph_extras(self) -> bool {
        matches!(self, FeatureSetId::AdgraphFull | FeatureSetId::AdgraphStructural)
    }
}

impl std::fmt::Display for FeatureSetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureCategory {
    Content,
    Structure,
    Flow,
}

impl FeatureCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureCategory::Content => "Content",
            FeatureCategory::Structure => "Structure",
            FeatureCategory::Flow => "Flow",
        }
    }
}

/// Every feature name belongs to exactly one category, read off its prefix.
pub fn feature_category(name: &str) -> FeatureCategory {
    if name.starts_with("content_") {
        FeatureCategory::Content
    } else if name.starts_with("flow_") {
        FeatureCategory::Flow
    } else {
        FeatureCategory::Structure
    }
}

pub const DEFAULT_AD_KEYWORDS: &[&str] =
    &["ad", "ads", "advert", "banner", "sponsor", "track", "pixel", "analytics", "sync"];

#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub ad_keywords: Vec<String>,
    pub psl: SuffixList,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            ad_keywords: DEFAULT_AD_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            psl: SuffixList::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub node_id: NodeId,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_set: FeatureSetId,
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
    /// One entry per content-extraction problem (unparseable URLs).
    pub diagnostics: Vec<String>,
}

impl FeatureMatrix {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn dimension_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d{2,4}x\d{2,4}").expect("valid regex"))
}

/// Precomputed per-graph state shared by all per-node extractions.
pub struct Extractor<'g> {
    graph: &'g PageGraph,
    config: &'g FeatureConfig,
    struct_view: View,
    /// AdGraph-style view: no storage layer, no redirect edges. Used by the
    /// `adgraph_*` sets, whose representation misses those captures.
    adgraph_view: View,
    flow_view: View,
    /// Scripts delivered by each node, for behavior attribution.
    executed_scripts: Vec<Vec<NodeId>>,
    cookie_sets: Vec<usize>,
    cookie_gets: Vec<usize>,
    local_sets: Vec<usize>,
    local_gets: Vec<usize>,
    requests_sent: Vec<usize>,
    requests_received: Vec<usize>,
    redirects_sent: Vec<usize>,
    redirects_received: Vec<usize>,
    redirect_parent: Vec<Option<NodeId>>,
    shared_in: Vec<usize>,
    shared_out: Vec<usize>,
    common_storage: Vec<usize>,
    modifications: Vec<usize>,
    sets_storage: Vec<bool>,
}

impl<'g> Extractor<'g> {
    pub fn new(graph: &'g PageGraph, config: &'g FeatureConfig) -> Self {
        let n = graph.nodes.len();
        let struct_view =
            View::new(n, graph.structural_edges().map(|e| (e.src, e.dst, false)));
        let non_storage = graph.nodes.iter().filter(|x| !x.kind.is_storage()).count();
        let adgraph_view = View::with_effective_n(
            n,
            non_storage,
            graph
                .structural_edges()
                .filter(|e| {
                    matches!(
                        e.kind,
                        EdgeKind::Creates
                            | EdgeKind::Modifies
                            | EdgeKind::InitiatesRequest
                            | EdgeKind::ExecutesScript
                    )
                })
                .map(|e| (e.src, e.dst, false)),
        );
        let flow_view = View::new(
            n,
            graph.flow_edges().map(|e| {
                let bidir = matches!(e.kind, EdgeKind::CommonStorageAccess);
                (e.src, e.dst, bidir)
            }),
        );
        let mut executed_scripts = vec![Vec::new(); n];
        let mut cookie_sets = vec![0usize; n];
        let mut cookie_gets = vec![0usize; n];
        let mut local_sets = vec![0usize; n];
        let mut local_gets = vec![0usize; n];
        let mut requests_sent = vec![0usize; n];
        let mut requests_received = vec![0usize; n];
        let mut redirects_sent = vec![0usize; n];
        let mut redirects_received = vec![0usize; n];
        let mut redirect_parent = vec![None; n];
        let mut shared_in = vec![0usize; n];
        let mut shared_out = vec![0usize; n];
        let mut common_storage = vec![0usize; n];
        let mut modifications = vec![0usize; n];
        let mut sets_storage = vec![false; n];
        for e in &graph.edges {
            match e.kind {
                EdgeKind::ExecutesScript => executed_scripts[e.src].push(e.dst),
                EdgeKind::StorageSet => {
                    sets_storage[e.src] = true;
                    match storage_kind(graph, e.dst) {
                        Some(StorageKind::Cookie) => cookie_sets[e.src] += 1,
                        Some(StorageKind::Local) => local_sets[e.src] += 1,
                        None => {}
                    }
                }
                EdgeKind::StorageGet => match storage_kind(graph, e.src) {
                    Some(StorageKind::Cookie) => cookie_gets[e.dst] += 1,
                    Some(StorageKind::Local) => local_gets[e.dst] += 1,
                    None => {}
                },
                EdgeKind::InitiatesRequest => {
                    requests_sent[e.src] += 1;
                    requests_received[e.dst] += 1;
                }
                EdgeKind::Redirect => {
                    redirects_sent[e.src] += 1;
                    redirects_received[e.dst] += 1;
                    redirect_parent[e.dst] = Some(e.src);
                }
                EdgeKind::SharedValue { .. } => {
                    shared_out[e.src] += 1;
                    shared_in[e.dst] += 1;
                }
                EdgeKind::CommonStorageAccess => {
                    common_storage[e.src] += 1;
                    common_storage[e.dst] += 1;
                }
                EdgeKind::Creates => {}
                EdgeKind::Modifies => modifications[e.dst] += 1,
            }
        }
        Self {
            graph,
            config,
            struct_view,
            adgraph_view,
            flow_view,
            executed_scripts,
            cookie_sets,
            cookie_gets,
            local_sets,
            local_gets,
            requests_sent,
            requests_received,
            redirects_sent,
            redirects_received,
            redirect_parent,
            shared_in,
            shared_out,
            common_storage,
            modifications,
            sets_storage,
        }
    }

    /// The node itself plus scripts it delivered.
    fn attribution_group(&self, node: NodeId) -> Vec<NodeId> {
        let mut group = vec![node];
        group.extend(self.executed_scripts[node].iter().copied());
        group
    }

    fn attributed(&self, counts: &[usize], node: NodeId) -> f64 {
        self.attribution_group(node).into_iter().map(|v| counts[v]).sum::<usize>() as f64
    }

    fn redirect_depth(&self, node: NodeId) -> f64 {
        let mut depth = 0u64;
        let mut cur = node;
        while let Some(parent) = self.redirect_parent[cur] {
            depth += 1;
            cur = parent;
            if depth as usize > self.graph.nodes.len() {
                break;
            }
        }
        depth as f64
    }

    /// Content features of a network node's URL. Unparseable URLs emit all
    /// zeros and a diagnostic string.
    pub fn content(&self, node: NodeId) -> (Vec<f64>, Option<String>) {
        let (url, resource_type) = match &self.graph.nodes[node].kind {
            NodeKind::Network { url, resource_type, .. } => (url.clone(), *resource_type),
            _ => (String::new(), ResourceType::Other),
        };
        let mut v = Vec::with_capacity(CONTENT_FEATURES.len());
        for rt in ResourceType::ALL {
            v.push(if rt == resource_type { 1.0 } else { 0.0 });
        }
        let parts = match UrlParts::parse(&url) {
            Ok(p) => p,
            Err(_) => {
                let mut zeros = vec![0.0; CONTENT_FEATURES.len()];
                for (i, flag) in zeros.iter_mut().enumerate().take(ResourceType::ALL.len()) {
                    *flag = v[i];
                }
                return (zeros, Some(format!("node {node}: unparseable url `{url}`")));
            }
        };
        let lower = url.to_ascii_lowercase();
        let keyword =
            self.config.ad_keywords.iter().any(|k| lower.contains(k.to_ascii_lowercase().as_str()));
        v.push(if keyword { 1.0 } else { 0.0 });
        let dims = parts
            .query_pairs()
            .iter()
            .any(|(_, value)| dimension_regex().is_match(value));
        v.push(if dims { 1.0 } else { 0.0 });
        let valid_query =
            parts.query_pairs().iter().any(|(name, value)| !name.is_empty() && !value.is_empty());
        v.push(if valid_query { 1.0 } else { 0.0 });
        v.push(url.chars().count() as f64);
        let host_registrable = self.config.psl.registrable_domain(&parts.host);
        let first_party = self.graph.page.first_party.to_ascii_lowercase();
        v.push(if host_registrable != first_party { 1.0 } else { 0.0 });
        v.push(if is_strict_subdomain(&parts.host, &first_party) { 1.0 } else { 0.0 });
        let query = parts.query.clone().unwrap_or_default();
        v.push(if !first_party.is_empty() && query.contains(first_party.as_str()) {
            1.0
        } else {
            0.0
        });
        v.push(if query.contains(';') { 1.0 } else { 0.0 });
        debug_assert_eq!(v.len(), CONTENT_FEATURES.len());
        (v, None)
    }

    /// Structural features. The `webgraph_*` sets use the full structural
    /// subgraph; the `adgraph_*` variants use the AdGraph-style view (no
    /// storage layer or redirect capture) and add sibling, parent, and
    /// script-modification rows.
    pub fn structural(&self, node: NodeId, adgraph_variant: bool) -> Vec<f64> {
        let view = if adgraph_variant { &self.adgraph_view } else { &self.struct_view };
        let n = view.node_count() as f64;
        let e = view.edge_count as f64;
        let mut v = Vec::with_capacity(STRUCT_FEATURES.len() + ADGRAPH_EXTRA_FEATURES.len());
        v.push(n);
        v.push(e);
        v.push(if e > 0.0 { n / e } else { 0.0 });
        v.push(view.in_deg[node] as f64);
        v.push(view.out_deg[node] as f64);
        v.push(view.total_degree(node) as f64);
        v.push(view.avg_degree_connectivity(node));
        let (closeness, ecc) = view.centrality(node);
        v.push(closeness);
        v.push(ecc);
        let ancestors = view.ancestors(node);
        let mut by_kind = [0usize; 4];
        let mut any_sets = false;
        let mut any_eval = false;
        let mut any_script = false;
        for &a in &ancestors {
            match &self.graph.nodes[a].kind {
                NodeKind::Html { .. } => by_kind[0] += 1,
                NodeKind::Network { .. } => by_kind[1] += 1,
                NodeKind::Script { is_eval, .. } => {
                    by_kind[2] += 1;
                    any_script = true;
                    any_eval |= *is_eval;
                }
                NodeKind::Storage { .. } => by_kind[3] += 1,
            }
            any_sets |= self.sets_storage[a];
        }
        v.extend(by_kind.iter().map(|&c| c as f64));
        // Storage writes are invisible to the AdGraph representation.
        v.push(if any_sets && !adgraph_variant { 1.0 } else { 0.0 });
        v.push(if any_eval { 1.0 } else { 0.0 });
        v.push(if any_script { 1.0 } else { 0.0 });
        let parents = view.parents(node);
        let parent_is_eval = parents.iter().any(|&p| {
            matches!(self.graph.nodes[p].kind, NodeKind::Script { is_eval: true, .. })
        });
        v.push(if parent_is_eval { 1.0 } else { 0.0 });
        if adgraph_variant {
            v.push(view.sibling_count(node) as f64);
            v.push(parents.iter().map(|&p| view.sibling_count(p)).sum::<usize>() as f64);
            v.push(self.modifications[node] as f64);
            v.push(parents.iter().map(|&p| self.modifications[p]).sum::<usize>() as f64);
            let mut parent_kinds = [0usize; 4];
            for &p in &parents {
                match self.graph.nodes[p].kind {
                    NodeKind::Html { .. } => parent_kinds[0] += 1,
                    NodeKind::Network { .. } => parent_kinds[1] += 1,
                    NodeKind::Script { .. } => parent_kinds[2] += 1,
                    NodeKind::Storage { .. } => parent_kinds[3] += 1,
                }
            }
            v.extend(parent_kinds.iter().map(|&c| c as f64));
            v.push(mean(parents.iter().map(|&p| view.in_deg[p] as f64)));
            v.push(mean(parents.iter().map(|&p| view.out_deg[p] as f64)));
            v.push(mean(parents.iter().map(|&p| view.total_degree(p) as f64)));
            v.push(mean(parents.iter().map(|&p| view.avg_degree_connectivity(p))));
        }
        v
    }

    /// Flow features: storage access, request and redirect traffic, shared
    /// information edges, and positional statistics of the flow subgraph.
    pub fn flow(&self, node: NodeId) -> Vec<f64> {
        let mut v = Vec::with_capacity(FLOW_FEATURES.len());
        v.push(self.attributed(&self.cookie_sets, node));
        v.push(self.attributed(&self.cookie_gets, node));
        v.push(self.attributed(&self.local_sets, node));
        v.push(self.attributed(&self.local_gets, node));
        v.push(self.attributed(&self.requests_sent, node));
        v.push(self.requests_received[node] as f64);
        v.push(self.redirects_sent[node] as f64);
        v.push(self.redirects_received[node] as f64);
        v.push(self.redirect_depth(node));
        v.push(self.shared_in[node] as f64);
        v.push(self.shared_out[node] as f64);
        v.push(self.attributed(&self.common_storage, node));
        v.push(self.flow_view.ancestor_count(node) as f64);
        let n = self.graph.nodes.len() as f64;
        let e = self.flow_view.edge_count as f64;
        v.push(n);
        v.push(e);
        v.push(if e > 0.0 { n / e } else { 0.0 });
        v.push(self.flow_view.in_deg[node] as f64);
        v.push(self.flow_view.out_deg[node] as f64);
        v.push(self.flow_view.total_degree(node) as f64);
        v.push(self.flow_view.avg_degree_connectivity(node));
        let (closeness, ecc) = self.flow_view.centrality(node);
        v.push(closeness);
        v.push(ecc);
        debug_assert_eq!(v.len(), FLOW_FEATURES.len());
        v
    }

    /// Full vector for one node under a feature set.
    pub fn vector(&self, node: NodeId, set: FeatureSetId) -> (Vec<f64>, Option<String>) {
        let mut values = self.structural(node, set.has_adgraph_extras());
        let mut diag = None;
        if set.has_flow() {
            values.extend(self.flow(node));
        }
        if set.has_content() {
            let (content, d) = self.content(node);
            values.extend(content);
            diag = d;
        }
        (values, diag)
    }
}

fn storage_kind(graph: &PageGraph, node: NodeId) -> Option<StorageKind> {
    match graph.nodes[node].kind {
        NodeKind::Storage { storage, .. } => Some(storage),
        _ => None,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// One row per network node in id order; deterministic for a given graph.
pub fn extract_matrix(
    graph: &PageGraph,
    set: FeatureSetId,
    config: &FeatureConfig,
) -> FeatureMatrix {
    let extractor = Extractor::new(graph, config);
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for node in graph.network_nodes() {
        let (values, diag) = extractor.vector(node.id, set);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        rows.push(FeatureRow { node_id: node.id, values });
        diagnostics.extend(diag);
    }
    FeatureMatrix {
        feature_set: set,
        names: set.feature_names().into_iter().map(str::to_string).collect(),
        rows,
        diagnostics,
    }
}

/// Formats a value the way the CSV export does: integral counts stay
/// integers, everything else uses the shortest roundtrip float form.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        format!("{}", v as i64)
    } else {
        let mut buf = ryu_format(v);
        if buf.ends_with(".0") {
            buf.truncate(buf.len() - 2);
        }
        buf
    }
}

fn ryu_format(v: f64) -> String {
    // serde_json's float formatting is shortest-roundtrip and stable.
    serde_json::to_string(&v).expect("finite float serializes")
}

/// CSV export: `node_id,label,<feature names...>`. Unlabeled rows get -1.
pub fn matrix_to_csv(matrix: &FeatureMatrix, labels: Option<&BTreeMap<NodeId, bool>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["node_id".to_string(), "label".to_string()];
    header.extend(matrix.names.iter().cloned());
    w.write_record(&header).expect("csv header");
    for row in &matrix.rows {
        let label = match labels {
            None => "-1".to_string(),
            Some(map) => match map.get(&row.node_id) {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => "-1".to_string(),
            },
        };
        let mut record = vec![row.node_id.to_string(), label];
        record.extend(row.values.iter().map(|&v| format_value(v)));
        w.write_record(&record).expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv buffer")).expect("csv utf8")
}


/// Parses a matrix CSV back into `(matrix, labels)`.
pub fn matrix_from_csv(
    text: &str,
    set: FeatureSetId,
) -> Result<(FeatureMatrix, BTreeMap<NodeId, Option<bool>>), String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.len() < 2 || &header[0] != "node_id" || &header[1] != "label" {
        return Err("matrix csv must start with node_id,label".to_string());
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let expected: Vec<String> = set.feature_names().into_iter().map(str::to_string).collect();
    if names != expected {
        return Err(format!("feature columns do not match set {}", set.as_str()));
    }
    let mut rows = Vec::new();
    let mut labels = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() != expected.len() + 2 {
            return Err(format!("row has {} fields, expected {}", record.len(), expected.len() + 2));
        }
        let node_id: NodeId = record[0].parse().map_err(|_| "bad node_id".to_string())?;
        let label = match &record[1] {
            "1" => Some(true),
            "0" => Some(false),
            _ => None,
        };
        let values = record
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| format!("bad value `{v}`")))
            .collect::<Result<Vec<f64>, String>>()?;
        labels.insert(node_id, label);
        rows.push(FeatureRow { node_id, values });
    }
    Ok((
        FeatureMatrix {
            feature_set: set,
            names: expected,
            rows,
            diagnostics: Vec::new(),
        },
        labels,
    ))
}
