//! Graph construction from a validated page trace.
//!
//! Composition rules: element creations and modifications become script-to-
//! HTML edges; requests hang off their initiating element or script; redirect
//! events chain network nodes; storage events attach storage nodes to their
//! actors; cookie keys on a request count as storage reads by that request.
//! Once all structural edges exist, shared-value and common-storage-access
//! edges are derived.

use std::collections::HashMap;

use super::{Edge, EdgeKind, GraphConfig, Node, NodeId, NodeKind, PageGraph, PageMeta, StorageValue};
use crate::eventlog::{ActorKind, CreatorKind, EventKind, InitiatorKind, PageTrace, StorageKind};

struct Builder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    storage_values: Vec<StorageValue>,
    requests: HashMap<String, NodeId>,
    elements: HashMap<String, NodeId>,
    scripts: HashMap<String, NodeId>,
    storage: HashMap<(StorageKind, String), NodeId>,
    /// Most recent network node per URL, for script source attachment.
    by_url: HashMap<String, NodeId>,
    seen_values: std::collections::HashSet<(NodeId, String)>,
}

impl Builder {
    fn new() -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
            storage_values: Vec::new(),
            requests: HashMap::new(),
            elements: HashMap::new(),
            scripts: HashMap::new(),
            storage: HashMap::new(),
            by_url: HashMap::new(),
            seen_values: Default::default(),
        }
    }

    fn add_node(&mut self, ts: u64, kind: NodeKind) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { id, ts, kind });
        id
    }

    fn edge(&mut self, src: NodeId, dst: NodeId, kind: EdgeKind) {
        if src != dst {
            self.edges.push(Edge::new(src, dst, kind));
        }
    }

    fn storage_node(&mut self, ts: u64, storage: StorageKind, key: &str) -> NodeId {
        if let Some(&id) = self.storage.get(&(storage, key.to_string())) {
            return id;
        }
        let id = self.add_node(ts, NodeKind::Storage { storage, key: key.to_string() });
        self.storage.insert((storage, key.to_string()), id);
        id
    }

    fn record_value(&mut self, node: NodeId, value: &str, ts: u64) {
        if self.seen_values.insert((node, value.to_string())) {
            self.storage_values.push(StorageValue { node, value: value.to_string(), ts });
        }
    }

    fn actor_node(&mut self, actor_kind: ActorKind, id: &str) -> Option<NodeId> {
        match actor_kind {
            ActorKind::Script => self.scripts.get(id).copied(),
            ActorKind::Request => self.requests.get(id).copied(),
        }
    }
}

/// Builds the page graph for a trace. The trace is expected to pass
/// [`crate::eventlog::validate_trace`]; events with unresolvable references
/// are skipped rather than panicking so partially valid traces degrade softly.
pub fn build_graph(trace: &PageTrace, config: &GraphConfig) -> PageGraph {
    let mut b = Builder::new();
    for ev in &trace.events {
        let ts = ev.ts;
        match &ev.kind {
            EventKind::ElementCreated { element_id, tag, creator } => {
                let node = b.add_node(
                    ts,
                    NodeKind::Html { tag: tag.clone(), element_id: element_id.clone() },
                );
                b.elements.insert(element_id.clone(), node);
                if let (CreatorKind::Script, Some(sid)) = (creator.kind, &creator.id) {
                    if let Some(&script) = b.scripts.get(sid) {
                        b.edge(script, node, EdgeKind::Creates);
                    }
                }
            }
            EventKind::ElementModified { element_id, script_id, .. } => {
                if let (Some(&script), Some(&elem)) =
                    (b.scripts.get(script_id), b.elements.get(element_id))
                {
                    b.edge(script, elem, EdgeKind::Modifies);
                }
            }
            EventKind::Request { request_id, url, resource_type, initiator, cookie_keys } => {
                let node = b.add_node(
                    ts,
                    NodeKind::Network {
                        url: url.clone(),
                        resource_type: *resource_type,
                        request_id: request_id.clone(),
                    },
                );
                b.requests.insert(request_id.clone(), node);
                b.by_url.insert(url.clone(), node);
                match (initiator.kind, &initiator.id) {
                    (InitiatorKind::Element, Some(id)) => {
                        if let Some(&elem) = b.elements.get(id) {
                            b.edge(elem, node, EdgeKind::InitiatesRequest);
                        }
                    }
                    (InitiatorKind::Script, Some(id)) => {
                        if let Some(&script) = b.scripts.get(id) {
                            b.edge(script, node, EdgeKind::InitiatesRequest);
                        }
                    }
                    _ => {}
                }
                for key in cookie_keys {
                    let storage = b.storage_node(ts, StorageKind::Cookie, key);
                    b.edge(storage, node, EdgeKind::StorageGet);
                }
            }
            EventKind::Response { request_id, set_storage, .. } => {
                if let Some(&node) = b.requests.get(request_id) {
                    for write in set_storage {
                        let storage = b.storage_node(ts, write.storage, &write.key);
                        b.edge(node, storage, EdgeKind::StorageSet);
                        b.record_value(storage, &write.value, ts);
                    }
                }
            }
            EventKind::Redirect { request_id, new_request_id, to_url } => {
                if let Some(&src) = b.requests.get(request_id) {
                    let resource_type = match &b.nodes[src].kind {
                        NodeKind::Network { resource_type, .. } => *resource_type,
                        _ => unreachable!(),
                    };
                    let node = b.add_node(
                        ts,
                        NodeKind::Network {
                            url: to_url.clone(),
                            resource_type,
                            request_id: new_request_id.clone(),
                        },
                    );
                    b.requests.insert(new_request_id.clone(), node);
                    b.by_url.insert(to_url.clone(), node);
                    b.edge(src, node, EdgeKind::Redirect);
                }
            }
            EventKind::ScriptSource { script_id, url, parent_element, is_eval } => {
                let node = b.add_node(
                    ts,
                    NodeKind::Script {
                        url: url.clone(),
                        is_eval: *is_eval,
                        script_id: script_id.clone(),
                    },
                );
                b.scripts.insert(script_id.clone(), node);
                let source = url
                    .as_ref()
                    .and_then(|u| b.by_url.get(u).copied())
                    .or_else(|| {
                        parent_element.as_ref().and_then(|e| b.elements.get(e).copied())
                    });
                if let Some(src) = source {
                    b.edge(src, node, EdgeKind::ExecutesScript);
                }
            }
            EventKind::StorageSet { actor, storage, key, value } => {
                if let Some(actor_node) = b.actor_node(actor.kind, &actor.id) {
                    let storage_node = b.storage_node(ts, *storage, key);
                    b.edge(actor_node, storage_node, EdgeKind::StorageSet);
                    b.record_value(storage_node, value, ts);
                }
            }
            EventKind::StorageGet { actor, storage, key, value } => {
                if let Some(actor_node) = b.actor_node(actor.kind, &actor.id) {
                    let storage_node = b.storage_node(ts, *storage, key);
                    b.edge(storage_node, actor_node, EdgeKind::StorageGet);
                    b.record_value(storage_node, value, ts);
                }
            }
        }
    }

    let mut graph = PageGraph {
        page: PageMeta {
            page_url: trace.page_url.clone(),
            first_party: trace.first_party.clone(),
            storage_values: b.storage_values,
        },
        config: *config,
        nodes: b.nodes,
        edges: b.edges,
    };
    graph.rebuild_shared_value_edges();
    add_common_storage_access(&mut graph);
    graph
}

/// For every storage node, connect each pair of distinct non-storage accessors
/// (set or get). The single stored direction runs from the lower to the higher
/// node id to keep the edge multiset canonical.
fn add_common_storage_access(graph: &mut PageGraph) {
    let mut accessors: Vec<Vec<NodeId>> = vec![Vec::new(); graph.nodes.len()];
    for e in &graph.edges {
        match e.kind {
            // Sets run actor -> storage, gets run storage -> actor.
            EdgeKind::StorageSet => accessors[e.dst].push(e.src),
            EdgeKind::StorageGet => accessors[e.src].push(e.dst),
            _ => {}
        }
    }
    let mut new_edges = Vec::new();
    for (node, list) in accessors.iter().enumerate() {
        if !graph.nodes[node].kind.is_storage() {
            continue;
        }
        let mut uniq: Vec<NodeId> = list.clone();
        uniq.sort_unstable();
        uniq.dedup();
        for i in 0..uniq.len() {
            for j in (i + 1)..uniq.len() {
                new_edges.push(Edge::new(uniq[i], uniq[j], EdgeKind::CommonStorageAccess));
            }
        }
    }
    graph.edges.extend(new_edges);
}
