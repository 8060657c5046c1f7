//! Cross-layer page graph: HTML, network, script, and storage nodes joined by
//! structural edges from the trace plus information-flow edges (shared
//! identifier values and common storage access).

mod build;
mod values;

pub use build::build_graph;
pub use values::{match_values, transform_value, url_tokens, ValueTransform, DETECTOR_TRANSFORMS};

use serde::{Deserialize, Serialize};

use crate::eventlog::{ResourceType, StorageKind};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum NodeKind {
    Html {
        tag: String,
        element_id: String,
    },
    Network {
        url: String,
        resource_type: ResourceType,
        request_id: String,
    },
    Script {
        url: Option<String>,
        is_eval: bool,
        script_id: String,
    },
    Storage {
        storage: StorageKind,
        key: String,
    },
}

impl NodeKind {
    pub fn is_network(&self) -> bool {
        matches!(self, NodeKind::Network { .. })
    }

    pub fn is_storage(&self) -> bool {
        matches!(self, NodeKind::Storage { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NodeKind::Html { .. } => "html",
            NodeKind::Network { .. } => "network",
            NodeKind::Script { .. } => "script",
            NodeKind::Storage { .. } => "storage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Sequence index of the event that introduced the node.
    pub ts: u64,
    #[serde(flatten)]
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeKind {
    /// Script created an HTML element.
    Creates,
    /// Script modified an HTML element attribute.
    Modifies,
    /// HTML element or script initiated a network request.
    InitiatesRequest,
    /// Network request redirected to another request.
    Redirect,
    /// Network response or HTML element delivered an executing script.
    ExecutesScript,
    /// Script or request wrote a storage value.
    StorageSet,
    /// Script or request read a storage value.
    StorageGet,
    /// A stored value (possibly encoded or hashed) appears in a request URL.
    SharedValue { transform: ValueTransform },
    /// Two non-storage nodes accessed the same storage node.
    CommonStorageAccess,
}

impl EdgeKind {
    /// Information-flow edges; everything else is structural.
    pub fn is_flow(&self) -> bool {
        matches!(self, EdgeKind::SharedValue { .. } | EdgeKind::CommonStorageAccess)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(flatten)]
    pub kind: EdgeKind,
    pub flow: bool,
}

impl Edge {
    pub fn new(src: NodeId, dst: NodeId, kind: EdgeKind) -> Self {
        let flow = kind.is_flow();
        Self { src, dst, kind, flow }
    }
}

/// A storage value observed in the trace, kept for identifier matching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageValue {
    pub node: NodeId,
    pub value: String,
    pub ts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Values shorter than this never produce shared-value edges.
    #[serde(default = "default_min_value_len")]
    pub min_value_len: usize,
}

fn default_min_value_len() -> usize {
    8
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { min_value_len: default_min_value_len() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageMeta {
    pub page_url: String,
    pub first_party: String,
    pub storage_values: Vec<StorageValue>,
}

/// Immutable after construction; mutation operators clone and rebuild.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageGraph {
    pub page: PageMeta,
    pub config: GraphConfig,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl PageGraph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn network_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind.is_network())
    }

    pub fn structural_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| !e.flow)
    }

    /// View restricted to shared-value and common-storage-access edges. All
    /// nodes are retained; only the edge set narrows.
    pub fn flow_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.flow)
    }

    /// The flow view as a graph: every node retained, only flow edges kept.
    pub fn flow_subgraph(&self) -> PageGraph {
        PageGraph {
            page: self.page.clone(),
            config: self.config,
            nodes: self.nodes.clone(),
            edges: self.flow_edges().cloned().collect(),
        }
    }

    pub fn url_of(&self, id: NodeId) -> Option<&str> {
        match &self.nodes[id].kind {
            NodeKind::Network { url, .. } => Some(url),
            _ => None,
        }
    }

    /// `(node, ts, url)` for every network node in id order.
    pub fn network_urls(&self) -> Vec<(NodeId, u64, String)> {
        self.network_nodes()
            .map(|n| match &n.kind {
                NodeKind::Network { url, .. } => (n.id, n.ts, url.clone()),
                _ => unreachable!(),
            })
            .collect()
    }

    /// Replaces the URLs of the given network nodes and rebuilds every
    /// shared-value edge from the recorded storage values. Structural and
    /// common-storage-access edges are untouched.
    pub fn rewrite_urls(&mut self, new_urls: &std::collections::BTreeMap<NodeId, String>) {
        for (&id, url) in new_urls {
            if let NodeKind::Network { url: slot, .. } = &mut self.nodes[id].kind {
                *slot = url.clone();
            }
        }
        self.rebuild_shared_value_edges();
    }

    /// Drops all shared-value edges and recomputes them against the current
    /// URLs. Deterministic: output order depends only on graph content.
    pub fn rebuild_shared_value_edges(&mut self) {
        self.edges.retain(|e| !matches!(e.kind, EdgeKind::SharedValue { .. }));
        let urls = self.network_urls();
        let pairs: Vec<(NodeId, String)> = self
            .page
            .storage_values
            .iter()
            .map(|sv| (sv.node, sv.value.clone()))
            .collect();
        let shared = match_values(&pairs, &urls, &self.config);
        self.edges.extend(shared);
    }

    /// Exhaustive edge-domain check; used by tests and the self-check path.
    pub fn check_edge_domains(&self) -> Result<(), String> {
        for e in &self.edges {
            if e.src == e.dst {
                return Err(format!("self loop at node {}", e.src));
            }
            if e.src >= self.nodes.len() || e.dst >= self.nodes.len() {
                return Err(format!("edge endpoint out of range: {} -> {}", e.src, e.dst));
            }
            let (src, dst) = (&self.nodes[e.src].kind, &self.nodes[e.dst].kind);
            let ok = match e.kind {
                EdgeKind::Redirect => src.is_network() && dst.is_network(),
                EdgeKind::StorageSet => !src.is_storage() && dst.is_storage(),
                EdgeKind::StorageGet => src.is_storage() && !dst.is_storage(),
                EdgeKind::SharedValue { .. } => {
                    (src.is_network() || src.is_storage()) && dst.is_network()
                }
                EdgeKind::CommonStorageAccess => !src.is_storage() && !dst.is_storage(),
                _ => true,
            };
            if !ok {
                return Err(format!(
                    "edge {:?} connects {} -> {}",
                    e.kind,
                    src.kind_name(),
                    dst.kind_name()
                ));
            }
            if e.flow != e.kind.is_flow() {
                return Err("flow flag disagrees with edge kind".to_string());
            }
        }
        Ok(())
    }
}

/// Serialization wrapper matching the on-disk layout: nodes carry an `attrs`
/// object, edges a flat record with a `flow` flag.
#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    page: PageMeta,
    config: GraphConfig,
    nodes: Vec<NodeFile>,
    edges: Vec<EdgeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeFile {
    id: NodeId,
    kind: String,
    attrs: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeFile {
    src: NodeId,
    dst: NodeId,
    kind: String,
    flow: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    transform: Option<ValueTransform>,
}

pub fn to_json(graph: &PageGraph) -> String {
    let nodes = graph
        .nodes
        .iter()
        .map(|n| {
            let mut attrs = serde_json::to_value(&n.kind).expect("node serializes");
            attrs.as_object_mut().expect("object").remove("node");
            attrs
                .as_object_mut()
                .expect("object")
                .insert("ts".to_string(), serde_json::json!(n.ts));
            NodeFile { id: n.id, kind: n.kind.kind_name().to_string(), attrs }
        })
        .collect();
    let edges = graph
        .edges
        .iter()
        .map(|e| {
            let (kind, transform) = match e.kind {
                EdgeKind::Creates => ("creates", None),
                EdgeKind::Modifies => ("modifies", None),
                EdgeKind::InitiatesRequest => ("initiates_request", None),
                EdgeKind::Redirect => ("redirect", None),
                EdgeKind::ExecutesScript => ("executes_script", None),
                EdgeKind::StorageSet => ("storage_set", None),
                EdgeKind::StorageGet => ("storage_get", None),
                EdgeKind::SharedValue { transform } => ("shared_value", Some(transform)),
                EdgeKind::CommonStorageAccess => ("common_storage_access", None),
            };
            EdgeFile { src: e.src, dst: e.dst, kind: kind.to_string(), flow: e.flow, transform }
        })
        .collect();
    let file = GraphFile {
        page: graph.page.clone(),
        config: graph.config,
        nodes,
        edges,
    };
    serde_json::to_string_pretty(&file).expect("graph serializes")
}


pub fn from_json(text: &str) -> Result<PageGraph, serde_json::Error> {
    let file: GraphFile = serde_json::from_str(text)?;
    let nodes = file
        .nodes
        .into_iter()
        .map(|n| {
            let ts = n.attrs.get("ts").and_then(|v| v.as_u64()).unwrap_or(0);
            let mut attrs = n.attrs;
            if let Some(obj) = attrs.as_object_mut() {
                obj.remove("ts");
                obj.insert("node".to_string(), serde_json::json!(n.kind));
            }
            let kind: NodeKind = serde_json::from_value(attrs)?;
            Ok(Node { id: n.id, ts, kind })
        })
        .collect::<Result<Vec<_>, serde_json::Error>>()?;
    let edges = file
        .edges
        .into_iter()
        .map(|e| {
            let kind = match (e.kind.as_str(), e.transform) {
                ("creates", _) => EdgeKind::Creates,
                ("modifies", _) => EdgeKind::Modifies,
                ("initiates_request", _) => EdgeKind::InitiatesRequest,
                ("redirect", _) => EdgeKind::Redirect,
                ("executes_script", _) => EdgeKind::ExecutesScript,
                ("storage_set", _) => EdgeKind::StorageSet,
                ("storage_get", _) => EdgeKind::StorageGet,
                ("shared_value", Some(t)) => EdgeKind::SharedValue { transform: t },
                ("common_storage_access", _) => EdgeKind::CommonStorageAccess,
                other => {
                    return Err(serde::de::Error::custom(format!("unknown edge kind {other:?}")))
                }
            };
            Ok(Edge::new(e.src, e.dst, kind))
        })
        .collect::<Result<Vec<_>, serde_json::Error>>()?;
    Ok(PageGraph { page: file.page, config: file.config, nodes, edges })
}
