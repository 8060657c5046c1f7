//! Evasion attacks against a trained classifier: random content mutations of
//! adversary URLs (domain, subdomain, query string, first-party collusion) and
//! greedy structure mutations (resource addition, redirect re-routing, value
//! obfuscation) that climb the desired-minus-undesired switch count.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{SuffixList, UnparseableUrl, UrlParts};
use crate::eventlog::ResourceType;
use crate::features::{extract_matrix, FeatureConfig, FeatureSetId};
use crate::graph::{
    transform_value, Edge, EdgeKind, Node, NodeId, NodeKind, PageGraph, DETECTOR_TRANSFORMS,
};
use crate::model::{predict, ModelError, TreeEnsembleModel};
use crate::seed;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Url(#[from] UnparseableUrl),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid mutation: {0}")]
    InvalidMutation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrlMutationKind {
    Domain,
    Subdomain,
    Both,
    QueryCount,
    QueryNames,
    QueryValues,
}

impl UrlMutationKind {
    pub const ALL: [UrlMutationKind; 6] = [
        UrlMutationKind::Domain,
        UrlMutationKind::Subdomain,
        UrlMutationKind::Both,
        UrlMutationKind::QueryCount,
        UrlMutationKind::QueryNames,
        UrlMutationKind::QueryValues,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UrlMutationKind::Domain => "domain",
            UrlMutationKind::Subdomain => "subdomain",
            UrlMutationKind::Both => "both",
            UrlMutationKind::QueryCount => "query_count",
            UrlMutationKind::QueryNames => "query_names",
            UrlMutationKind::QueryValues => "query_values",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    fn is_host_kind(self) -> bool {
        matches!(self, UrlMutationKind::Domain | UrlMutationKind::Subdomain | UrlMutationKind::Both)
    }
}

pub type MutationPolicy = BTreeSet<UrlMutationKind>;

pub fn parse_policy(text: &str) -> Result<MutationPolicy, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| UrlMutationKind::parse(s).ok_or_else(|| format!("unknown mutation kind `{s}`")))
        .collect()
}

fn rand_label(rng: &mut ChaCha8Rng, len: usize) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect()
}

fn rand_token(rng: &mut ChaCha8Rng, len: usize) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect()
}

fn split_host<'a>(host: &'a str, psl: &SuffixList) -> (Vec<&'a str>, String, String) {
    let registrable = psl.registrable_domain(host);
    let suffix = match registrable.split_once('.') {
        Some((_, rest)) => rest.to_string(),
        None => registrable.clone(),
    };
    let sub = if host.len() > registrable.len() && host.ends_with(registrable.as_str()) {
        host[..host.len() - registrable.len() - 1].split('.').collect()
    } else {
        Vec::new()
    };
    (sub, registrable, suffix)
}

/// Rewrites the selected URL components with random alphanumeric tokens,
/// leaving the path intact. Host kinds pick one mutation at random from the
/// allowed set; query kinds apply as a random nonempty combination.
pub fn mutate_url_content(
    url: &str,
    policy: &MutationPolicy,
    psl: &SuffixList,
    rng: &mut ChaCha8Rng,
) -> Result<String, UnparseableUrl> {
    let mut parsed =
        url::Url::parse(url).map_err(|_| UnparseableUrl { url: url.to_string() })?;
    let host =
        parsed.host_str().ok_or_else(|| UnparseableUrl { url: url.to_string() })?.to_string();

    let host_kinds: Vec<UrlMutationKind> =
        policy.iter().copied().filter(|k| k.is_host_kind()).collect();
    if !host_kinds.is_empty() {
        let kind = host_kinds[rng.gen_range(0..host_kinds.len())];
        let (sub, registrable, suffix) = split_host(&host, psl);
        let domain_label = || -> String { registrable.split('.').next().unwrap_or("x").to_string() };
        let (new_sub, new_domain_label) = match kind {
            UrlMutationKind::Domain => (sub.join("."), rand_label(rng, 8)),
            UrlMutationKind::Subdomain => (rand_label(rng, 6), domain_label()),
            UrlMutationKind::Both => {
                let s = rand_label(rng, 6);
                (s, rand_label(rng, 8))
            }
            _ => unreachable!(),
        };
        let mut new_host = String::new();
        if !new_sub.is_empty() {
            new_host.push_str(&new_sub);
            new_host.push('.');
        }
        new_host.push_str(&new_domain_label);
        if !suffix.is_empty() && suffix != registrable {
            new_host.push('.');
            new_host.push_str(&suffix);
        }
        parsed
            .set_host(Some(&new_host))
            .map_err(|_| UnparseableUrl { url: url.to_string() })?;
    }

    let query_kinds: Vec<UrlMutationKind> =
        policy.iter().copied().filter(|k| !k.is_host_kind()).collect();
    if !query_kinds.is_empty() {
        let mut chosen: Vec<UrlMutationKind> =
            query_kinds.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        if chosen.is_empty() {
            chosen.push(query_kinds[rng.gen_range(0..query_kinds.len())]);
        }
        let mut pairs: Vec<(String, String)> = match parsed.query() {
            None => Vec::new(),
            Some(q) => q
                .split('&')
                .filter(|p| !p.is_empty())
                .map(|p| match p.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => (String::new(), p.to_string()),
                })
                .collect(),
        };
        for kind in chosen {
            match kind {
                UrlMutationKind::QueryCount => {
                    let n = pairs.len();
                    let lo = n.saturating_sub(2);
                    let hi = n + 2;
                    let mut target = n;
                    for _ in 0..8 {
                        target = rng.gen_range(lo..=hi);
                        if target != n {
                            break;
                        }
                    }
                    if target < n {
                        pairs.truncate(target);
                    } else {
                        for _ in n..target {
                            let klen = rng.gen_range(3..=7);
                            let k = rand_label(rng, klen);
                            let vlen = rng.gen_range(5..=10);
                            let v = rand_token(rng, vlen);
                            pairs.push((k, v));
                        }
                    }
                }
                UrlMutationKind::QueryNames => {
                    for (name, _) in pairs.iter_mut() {
                        if !name.is_empty() {
                            let len = rng.gen_range(3..=7);
                            *name = rand_label(rng, len);
                        }
                    }
                }
                UrlMutationKind::QueryValues => {
                    for (_, value) in pairs.iter_mut() {
                        let len = rng.gen_range(5..=10);
                        *value = rand_token(rng, len);
                    }
                }
                _ => unreachable!(),
            }
        }
        let rebuilt: Vec<String> = pairs
            .into_iter()
            .map(|(k, v)| if k.is_empty() { v } else { format!("{k}={v}") })
            .collect();
        if rebuilt.is_empty() {
            parsed.set_query(None);
        } else {
            parsed.set_query(Some(&rebuilt.join("&")));
        }
    }
    Ok(parsed.to_string())
}

/// CNAME-cloaking style collusion: the host becomes a random first-party
/// subdomain; path and query are untouched.
pub fn collude_first_party(
    url: &str,
    first_party: &str,
    rng: &mut ChaCha8Rng,
) -> Result<String, UnparseableUrl> {
    let mut parsed =
        url::Url::parse(url).map_err(|_| UnparseableUrl { url: url.to_string() })?;
    if parsed.host_str().is_none() {
        return Err(UnparseableUrl { url: url.to_string() });
    }
    let host = format!("{}.{first_party}", rand_label(rng, 6));
    parsed.set_host(Some(&host)).map_err(|_| UnparseableUrl { url: url.to_string() })?;
    Ok(parsed.to_string())
}

/// Nodes and edges under the adversary's control: resources served from its
/// registrable domain, scripts they execute, plus everything those create
/// (elements, requests, redirect targets, storage values written).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryScope {
    pub domain: String,
    pub nodes: BTreeSet<NodeId>,
}

impl AdversaryScope {
    pub fn for_domain(graph: &PageGraph, domain: &str, psl: &SuffixList) -> Self {
        let domain = domain.to_ascii_lowercase();
        let mut seeds: BTreeSet<NodeId> = BTreeSet::new();
        for node in &graph.nodes {
            let url = match &node.kind {
                NodeKind::Network { url, .. } => Some(url),
                NodeKind::Script { url: Some(url), .. } => Some(url),
                _ => None,
            };
            if let Some(url) = url {
                if let Ok(parts) = UrlParts::parse(url) {
                    if psl.registrable_domain(&parts.host) == domain {
                        seeds.insert(node.id);
                    }
                }
            }
        }
        let mut nodes = seeds.clone();
        // Storage is same-origin: a value belongs to the adversary only when a
        // node served from its domain reads or writes it.
        for e in &graph.edges {
            match e.kind {
                EdgeKind::StorageSet if seeds.contains(&e.src) => {
                    nodes.insert(e.dst);
                }
                EdgeKind::StorageGet if seeds.contains(&e.dst) => {
                    nodes.insert(e.src);
                }
                _ => {}
            }
        }
        // Closure over creation-carrying edges: elements and scripts the
        // adversary creates, requests they initiate, redirect targets.
        loop {
            let mut grew = false;
            for e in &graph.edges {
                let owning = matches!(
                    e.kind,
                    EdgeKind::Creates
                        | EdgeKind::ExecutesScript
                        | EdgeKind::InitiatesRequest
                        | EdgeKind::Redirect
                );
                if owning && nodes.contains(&e.src) && nodes.insert(e.dst) {
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        Self { domain, nodes }
    }

    pub fn network_nodes<'g>(&self, graph: &'g PageGraph) -> Vec<&'g Node> {
        graph
            .network_nodes()
            .filter(|n| self.nodes.contains(&n.id))
            .collect()
    }
}

/// The third party with the most ATS-classified resources; `None` when no
/// third-party node is predicted ATS.
pub fn pick_adversary(
    graph: &PageGraph,
    predictions: &BTreeMap<NodeId, bool>,
    psl: &SuffixList,
) -> Option<String> {
    let first_party = graph.page.first_party.to_ascii_lowercase();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for node in graph.network_nodes() {
        let url = match &node.kind {
            NodeKind::Network { url, .. } => url,
            _ => unreachable!(),
        };
        if let Ok(parts) = UrlParts::parse(url) {
            let domain = psl.registrable_domain(&parts.host);
            if domain != first_party && predictions.get(&node.id) == Some(&true) {
                *counts.entry(domain).or_insert(0) += 1;
            }
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(domain, _)| domain)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mutation", rename_all = "snake_case")]
pub enum Mutation {
    AddResource { parent: NodeId, resource_type: ResourceType, url: String },
    Reroute { chain_head: NodeId, scripts: Vec<NodeId> },
    Obfuscate { value_index: usize },
}

impl Mutation {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Mutation::AddResource { .. } => "add_resource",
            Mutation::Reroute { .. } => "reroute",
            Mutation::Obfuscate { .. } => "obfuscate",
        }
    }
}

/// Where synthetic URLs of added resources live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthUrlMode {
    AdversaryDomain,
    RandomDomain,
    FirstPartySubdomain,
}

pub struct CandidateCtx<'a> {
    pub seed: u64,
    pub iteration: u64,
    pub adversary_domain: &'a str,
    pub first_party: &'a str,
    pub synth_mode: SynthUrlMode,
}

/// Maximal redirect chains (node lists) whose members all lie in `scope`.
fn adversary_chains(graph: &PageGraph, scope: &BTreeSet<NodeId>) -> Vec<Vec<NodeId>> {
    let mut redirect_out: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut has_in: BTreeSet<NodeId> = BTreeSet::new();
    for e in &graph.edges {
        if e.kind == EdgeKind::Redirect {
            redirect_out.entry(e.src).or_insert(e.dst);
            has_in.insert(e.dst);
        }
    }
    let mut chains = Vec::new();
    for &head in redirect_out.keys() {
        if has_in.contains(&head) {
            continue;
        }
        let mut chain = vec![head];
        let mut cur = head;
        while let Some(&next) = redirect_out.get(&cur) {
            chain.push(next);
            cur = next;
        }
        if chain.len() >= 2 && chain.iter().all(|n| scope.contains(n)) {
            chains.push(chain);
        }
    }
    chains
}

/// Storage-value indices still carried (under any detector transform) in some
/// network URL.
fn carried_value_indices(graph: &PageGraph, scope: &BTreeSet<NodeId>) -> Vec<usize> {
    let urls = graph.network_urls();
    let tokenized: Vec<Vec<String>> =
        urls.iter().map(|(_, _, u)| crate::graph::url_tokens(u)).collect();
    let mut out = Vec::new();
    for (idx, sv) in graph.page.storage_values.iter().enumerate() {
        if !scope.contains(&sv.node) || sv.value.len() < graph.config.min_value_len {
            continue;
        }
        let forms: Vec<String> =
            DETECTOR_TRANSFORMS.iter().map(|t| transform_value(&sv.value, *t)).collect();
        let carried = tokenized
            .iter()
            .any(|tokens| tokens.iter().any(|tok| forms.iter().any(|f| f == tok)));
        if carried {
            out.push(idx);
        }
    }
    out
}

/// Enumerates this iteration's candidate mutations in canonical order:
/// additions (by parent id, image before script), re-routings (by chain head),
/// obfuscations (by value index). Without collusion, addition parents are the
/// adversary's leaf nodes; with collusion, any non-storage node qualifies.
/// No mutation ever deletes content.
pub fn candidate_mutations(
    graph: &PageGraph,
    scope: &BTreeSet<NodeId>,
    collusion: bool,
    ctx: &CandidateCtx,
) -> Vec<Mutation> {
    let mut out = Vec::new();
    let mut counter = 0u64;
    let parents: Vec<NodeId> = if collusion {
        graph.nodes.iter().filter(|n| !n.kind.is_storage()).map(|n| n.id).collect()
    } else {
        let mut out_deg = vec![0usize; graph.nodes.len()];
        for e in graph.structural_edges() {
            out_deg[e.src] += 1;
        }
        scope
            .iter()
            .copied()
            .filter(|&n| !graph.nodes[n].kind.is_storage() && out_deg[n] == 0)
            .collect()
    };
    for parent in parents {
        for resource_type in [ResourceType::Image, ResourceType::Script] {
            let mut rng =
                seed::stream(ctx.seed, "synth", ctx.iteration.wrapping_mul(1 << 20) + counter);
            counter += 1;
            let host = match ctx.synth_mode {
                SynthUrlMode::AdversaryDomain => ctx.adversary_domain.to_string(),
                SynthUrlMode::RandomDomain => format!("{}.com", rand_label(&mut rng, 8)),
                SynthUrlMode::FirstPartySubdomain => {
                    format!("{}.{}", rand_label(&mut rng, 6), ctx.first_party)
                }
            };
            let url = format!("http://{host}/res-{}", rand_token(&mut rng, 10));
            out.push(Mutation::AddResource { parent, resource_type, url });
        }
    }
    let scripts: Vec<NodeId> = scope
        .iter()
        .copied()
        .filter(|&n| matches!(graph.nodes[n].kind, NodeKind::Script { .. }))
        .collect();
    if !scripts.is_empty() {
        for chain in adversary_chains(graph, scope) {
            out.push(Mutation::Reroute { chain_head: chain[0], scripts: scripts.clone() });
        }
    }
    for value_index in carried_value_indices(graph, scope) {
        out.push(Mutation::Obfuscate { value_index });
    }
    out
}

/// Encoding outside the detector set used by obfuscation: the value reversed,
/// then hex-encoded.
pub fn obfuscate_value(value: &str) -> String {
    let reversed: String = value.chars().rev().collect();
    reversed.as_bytes().iter().map(|b| format!("{b:02x}")).collect()
}

/// Applies one mutation to a copy of the graph. Node count never decreases.
pub fn apply_mutation(graph: &PageGraph, mutation: &Mutation) -> Result<PageGraph, AttackError> {
    let mut g = graph.clone();
    match mutation {
        Mutation::AddResource { parent, resource_type, url } => {
            if *parent >= g.nodes.len() || g.nodes[*parent].kind.is_storage() {
                return Err(AttackError::InvalidMutation(format!(
                    "add_resource parent {parent} invalid"
                )));
            }
            let ts = g.nodes.iter().map(|n| n.ts).max().unwrap_or(0) + 1;
            let id = g.nodes.len();
            g.nodes.push(Node {
                id,
                ts,
                kind: NodeKind::Network {
                    url: url.clone(),
                    resource_type: *resource_type,
                    request_id: format!("synth_{id}"),
                },
            });
            g.edges.push(Edge::new(*parent, id, EdgeKind::InitiatesRequest));
        }
        Mutation::Reroute { chain_head, scripts } => {
            if scripts.is_empty() {
                return Err(AttackError::InvalidMutation("reroute without scripts".to_string()));
            }
            let mut chain = vec![*chain_head];
            let mut cur = *chain_head;
            loop {
                let next = g
                    .edges
                    .iter()
                    .find(|e| e.kind == EdgeKind::Redirect && e.src == cur)
                    .map(|e| e.dst);
                match next {
                    Some(n) => {
                        chain.push(n);
                        cur = n;
                    }
                    None => break,
                }
            }
            if chain.len() < 2 {
                return Err(AttackError::InvalidMutation(format!(
                    "no redirect chain at node {chain_head}"
                )));
            }
            let members: BTreeSet<NodeId> = chain.iter().copied().collect();
            g.edges.retain(|e| {
                !(e.kind == EdgeKind::Redirect
                    && members.contains(&e.src)
                    && members.contains(&e.dst))
            });
            for (i, &member) in chain.iter().enumerate().skip(1) {
                let script = scripts[(i - 1) % scripts.len()];
                g.edges.push(Edge::new(script, member, EdgeKind::InitiatesRequest));
            }
        }
        Mutation::Obfuscate { value_index } => {
            let sv = g
                .page
                .storage_values
                .get(*value_index)
                .ok_or_else(|| {
                    AttackError::InvalidMutation(format!("no storage value {value_index}"))
                })?
                .clone();
            let forms: BTreeSet<String> =
                DETECTOR_TRANSFORMS.iter().map(|t| transform_value(&sv.value, *t)).collect();
            let replacement = obfuscate_value(&sv.value);
            let mut rewrites = BTreeMap::new();
            for (id, _, url) in g.network_urls() {
                if let Some(new_url) = replace_url_tokens(&url, &forms, &replacement) {
                    rewrites.insert(id, new_url);
                }
            }
            g.rewrite_urls(&rewrites);
        }
    }
    Ok(g)
}

/// Replaces exact path-segment and query-value tokens found in `forms` with
/// `replacement`; `None` when nothing matched or the URL does not parse.
fn replace_url_tokens(
    url: &str,
    forms: &BTreeSet<String>,
    replacement: &str,
) -> Option<String> {
    let mut parsed = url::Url::parse(url).ok()?;
    let mut changed = false;
    let path = parsed.path().to_string();
    let new_path: Vec<String> = path
        .split('/')
        .map(|seg| {
            if forms.contains(seg) {
                changed = true;
                replacement.to_string()
            } else {
                seg.to_string()
            }
        })
        .collect();
    if let Some(query) = parsed.query().map(str::to_string) {
        let rebuilt: Vec<String> = query
            .split('&')
            .filter(|p| !p.is_empty())
            .map(|p| match p.split_once('=') {
                Some((k, v)) if forms.contains(v) => {
                    changed = true;
                    format!("{k}={replacement}")
                }
                Some(_) => p.to_string(),
                None if forms.contains(p) => {
                    changed = true;
                    replacement.to_string()
                }
                None => p.to_string(),
            })
            .collect();
        parsed.set_query(Some(&rebuilt.join("&")));
    }
    if changed {
        parsed.set_path(&new_path.join("/"));
        Some(parsed.to_string())
    } else {
        None
    }
}

/// Pre-attack class sizes and post-attack switch counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchCounts {
    pub ats_adv: usize,
    pub non_ats_adv: usize,
    pub ats_web: usize,
    pub non_ats_web: usize,
    pub desired: usize,
    pub undesired: usize,
    pub neutral: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub counts: SwitchCounts,
    pub careless: bool,
    /// `desired / ATS_adv`; `None` when the adversary had no ATS nodes.
    pub success_rate_pct: Option<f64>,
    /// `undesired / (NonATS_adv + NonATS_web)`, or `undesired / NonATS_adv`
    /// for a careless adversary; `None` on a zero denominator.
    pub collateral_damage_pct: Option<f64>,
    /// `neutral / ATS_web`; `None` on a zero denominator.
    pub other_changes_pct: Option<f64>,
}

fn ratio_pct(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(100.0 * num as f64 / den as f64)
    }
}

/// Metric formulas over raw counts.
pub fn metrics_from_counts(counts: SwitchCounts, careless: bool) -> AttackMetrics {
    let collateral_den = if careless {
        counts.non_ats_adv
    } else {
        counts.non_ats_adv + counts.non_ats_web
    };
    AttackMetrics {
        counts,
        careless,
        success_rate_pct: ratio_pct(counts.desired, counts.ats_adv),
        collateral_damage_pct: ratio_pct(counts.undesired, collateral_den),
        other_changes_pct: ratio_pct(counts.neutral, counts.ats_web),
    }
}

/// Compares pre- and post-attack predictions. Nodes present only in `post`
/// are freshly added adversary resources: predicted ATS they count as
/// undesired switches. Desired switches are adversary ATS to Non-ATS flips,
/// undesired covers every Non-ATS to ATS flip, neutral is non-adversary ATS
/// to Non-ATS.
pub fn compute_metrics(
    pre: &BTreeMap<NodeId, bool>,
    post: &BTreeMap<NodeId, bool>,
    adversary: &BTreeSet<NodeId>,
    careless: bool,
) -> AttackMetrics {
    let mut counts = SwitchCounts::default();
    for (&node, &was_ats) in pre {
        let adv = adversary.contains(&node);
        match (adv, was_ats) {
            (true, true) => counts.ats_adv += 1,
            (true, false) => counts.non_ats_adv += 1,
            (false, true) => counts.ats_web += 1,
            (false, false) => counts.non_ats_web += 1,
        }
        let is_ats = post.get(&node).copied().unwrap_or(was_ats);
        match (was_ats, is_ats) {
            (true, false) if adv => counts.desired += 1,
            (true, false) => counts.neutral += 1,
            (false, true) => counts.undesired += 1,
            _ => {}
        }
    }
    for (&node, &is_ats) in post {
        if !pre.contains_key(&node) && is_ats {
            counts.undesired += 1;
        }
    }
    metrics_from_counts(counts, careless)
}

/// Desired and undesired switch counts against the original predictions, the
/// quantity the greedy algorithm maximizes as `delta = d - u`.
pub fn switch_delta(
    pre: &BTreeMap<NodeId, bool>,
    post: &BTreeMap<NodeId, bool>,
    adversary: &BTreeSet<NodeId>,
) -> (usize, usize) {
    let m = compute_metrics(pre, post, adversary, false);
    (m.counts.desired, m.counts.undesired)
}

/// Classifies every network node of a graph.
pub fn predict_graph(
    graph: &PageGraph,
    model: &TreeEnsembleModel,
    feature_config: &FeatureConfig,
) -> Result<BTreeMap<NodeId, bool>, ModelError> {
    let matrix = extract_matrix(graph, model.feature_set, feature_config);
    let mut out = BTreeMap::new();
    for row in &matrix.rows {
        out.insert(row.node_id, predict(model, &row.values)?.ats);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentAttackConfig {
    pub policy: MutationPolicy,
    pub collusion: bool,
    pub careless: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentAttackReport {
    pub adversary_domain: String,
    pub feature_set: FeatureSetId,
    pub mutated_nodes: usize,
    /// Set when the adversary had nothing to mutate; success is undefined.
    pub no_adversary_ats: bool,
    pub metrics: AttackMetrics,
}

/// Rewrites the URLs of adversary nodes predicted ATS in `pre` and rebuilds
/// shared-value edges. Returns the mutated graph and how many URLs changed.
pub fn content_mutate_urls(
    graph: &PageGraph,
    pre: &BTreeMap<NodeId, bool>,
    adversary: &AdversaryScope,
    config: &ContentAttackConfig,
    psl: &SuffixList,
) -> Result<(PageGraph, usize), AttackError> {
    let targets: Vec<NodeId> = adversary
        .network_nodes(graph)
        .iter()
        .filter(|n| pre.get(&n.id) == Some(&true))
        .map(|n| n.id)
        .collect();
    if targets.is_empty() {
        return Ok((graph.clone(), 0));
    }
    let mut mutated = graph.clone();
    let mut rewrites = BTreeMap::new();
    for &node in &targets {
        let url = graph.url_of(node).expect("network node has a url").to_string();
        let mut rng = seed::stream(config.seed, "content", node as u64);
        let new_url = if config.collusion {
            let with_host = collude_first_party(&url, &graph.page.first_party, &mut rng)?;
            mutate_url_content(&with_host, &without_host_kinds(&config.policy), psl, &mut rng)?
        } else {
            mutate_url_content(&url, &config.policy, psl, &mut rng)?
        };
        rewrites.insert(node, new_url);
    }
    mutated.rewrite_urls(&rewrites);
    Ok((mutated, rewrites.len()))
}

/// Content-mutation attack: rewrites the URLs of adversary nodes initially
/// predicted ATS, rebuilds shared-value edges (URL manipulation can sever
/// them), re-extracts features, and reports switch metrics. The model itself
/// is untouched; mutations apply at inference only.
pub fn run_content_attack(
    graph: &PageGraph,
    model: &TreeEnsembleModel,
    adversary: &AdversaryScope,
    config: &ContentAttackConfig,
    feature_config: &FeatureConfig,
) -> Result<ContentAttackReport, AttackError> {
    let pre = predict_graph(graph, model, feature_config)?;
    let (mutated, mutated_nodes) =
        content_mutate_urls(graph, &pre, adversary, config, &feature_config.psl)?;
    if mutated_nodes == 0 {
        let metrics = compute_metrics(&pre, &pre, &adversary.nodes, config.careless);
        return Ok(ContentAttackReport {
            adversary_domain: adversary.domain.clone(),
            feature_set: model.feature_set,
            mutated_nodes: 0,
            no_adversary_ats: true,
            metrics,
        });
    }
    let post = predict_graph(&mutated, model, feature_config)?;
    let metrics = compute_metrics(&pre, &post, &adversary.nodes, config.careless);
    Ok(ContentAttackReport {
        adversary_domain: adversary.domain.clone(),
        feature_set: model.feature_set,
        mutated_nodes,
        no_adversary_ats: false,
        metrics,
    })
}

fn without_host_kinds(policy: &MutationPolicy) -> MutationPolicy {
    policy.iter().copied().filter(|k| !k.is_host_kind()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyAttackConfig {
    pub max_iter: usize,
    /// Allowed node-count growth as a fraction of the original size.
    pub growth_cap: f64,
    /// Adversary sample size per iteration; `None` means `min(|T|, 10)`.
    pub l_t: Option<usize>,
    pub collusion: bool,
    pub careless: bool,
    pub synth_mode: SynthUrlMode,
    pub seed: u64,
}

impl Default for GreedyAttackConfig {
    fn default() -> Self {
        Self {
            max_iter: 20,
            growth_cap: 0.2,
            l_t: None,
            collusion: false,
            careless: false,
            synth_mode: SynthUrlMode::AdversaryDomain,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub candidates: usize,
    pub committed: String,
    pub delta: i64,
    pub desired: usize,
    pub undesired: usize,
    pub node_count: usize,
    pub success_rate_pct: Option<f64>,
    pub collateral_damage_pct: Option<f64>,
    pub other_changes_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    NoCandidates,
    GrowthCapReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyAttackReport {
    pub adversary_domain: String,
    pub feature_set: FeatureSetId,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    pub growth_used_pct: f64,
    pub no_adversary_ats: bool,
    /// URLs rewritten by a content-mutation pass before the structure search.
    #[serde(default)]
    pub content_mutated_nodes: usize,
    pub metrics: AttackMetrics,
    pub trajectory: Vec<IterationRecord>,
}

/// Greedy random graph mutation: each iteration enumerates the sampled
/// adversary set's candidate mutations, evaluates every candidate by
/// reclassifying the mutated graph, commits the one with the largest
/// desired-minus-undesired delta (ties to the lowest candidate index), folds
/// any added node into the adversary set, and resamples it to `l_t`.
pub fn greedy_attack(
    graph: &PageGraph,
    model: &TreeEnsembleModel,
    adversary: &AdversaryScope,
    config: &GreedyAttackConfig,
    feature_config: &FeatureConfig,
) -> Result<GreedyAttackReport, AttackError> {
    let pre = predict_graph(graph, model, feature_config)?;
    let mut adversary_all = adversary.nodes.clone();
    let no_adversary_ats = !adversary_all
        .iter()
        .any(|n| pre.get(n).copied().unwrap_or(false));
    let initial_nodes = graph.node_count();
    let cap_nodes = ((1.0 + config.growth_cap) * initial_nodes as f64).floor() as usize;
    let l_t = config.l_t.unwrap_or_else(|| adversary_all.len().min(10));
    let mut working: BTreeSet<NodeId> = {
        let mut rng = seed::stream(config.seed, "sample", 0);
        sample_set(&adversary_all, l_t, &mut rng)
    };
    let mut current = graph.clone();
    let mut current_pred = pre.clone();
    let mut trajectory = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    let mut iterations_run = 0;
    for iteration in 0..config.max_iter {
        if current.node_count() > cap_nodes {
            stop_reason = StopReason::GrowthCapReached;
            break;
        }
        let ctx = CandidateCtx {
            seed: config.seed,
            iteration: iteration as u64,
            adversary_domain: &adversary.domain,
            first_party: &current.page.first_party,
            synth_mode: config.synth_mode,
        };
        let candidates: Vec<Mutation> =
            candidate_mutations(&current, &working, config.collusion, &ctx)
                .into_iter()
                .filter(|m| match m {
                    Mutation::AddResource { .. } => current.node_count() < cap_nodes,
                    _ => true,
                })
                .collect();
        if candidates.is_empty() {
            stop_reason = StopReason::NoCandidates;
            break;
        }
        let mut best: Option<(i64, usize, PageGraph, BTreeMap<NodeId, bool>)> = None;
        for (idx, m) in candidates.iter().enumerate() {
            let mutated = apply_mutation(&current, m)?;
            let post = predict_graph(&mutated, model, feature_config)?;
            let (d, u) = switch_delta(&pre, &post, &adversary_all);
            let delta = d as i64 - u as i64;
            if best.as_ref().is_none_or(|(bd, _, _, _)| delta > *bd) {
                best = Some((delta, idx, mutated, post));
            }
        }
        let (delta, idx, committed_graph, committed_pred) =
            best.expect("candidates were nonempty");
        let committed = &candidates[idx];
        if let Mutation::AddResource { .. } = committed {
            let new_node = committed_graph.node_count() - 1;
            adversary_all.insert(new_node);
            working.insert(new_node);
        }
        current = committed_graph;
        current_pred = committed_pred;
        iterations_run = iteration + 1;
        let metrics = compute_metrics(&pre, &current_pred, &adversary_all, config.careless);
        trajectory.push(IterationRecord {
            iteration,
            candidates: candidates.len(),
            committed: committed.kind_name().to_string(),
            delta,
            desired: metrics.counts.desired,
            undesired: metrics.counts.undesired,
            node_count: current.node_count(),
            success_rate_pct: metrics.success_rate_pct,
            collateral_damage_pct: metrics.collateral_damage_pct,
            other_changes_pct: metrics.other_changes_pct,
        });
        let mut rng = seed::stream(config.seed, "sample", iteration as u64 + 1);
        working = sample_set(&working, l_t, &mut rng);
    }
    let metrics = compute_metrics(&pre, &current_pred, &adversary_all, config.careless);
    let growth_used_pct = if initial_nodes == 0 {
        0.0
    } else {
        100.0 * (current.node_count() - initial_nodes) as f64 / initial_nodes as f64
    };
    Ok(GreedyAttackReport {
        adversary_domain: adversary.domain.clone(),
        feature_set: model.feature_set,
        iterations_run,
        stop_reason,
        growth_used_pct,
        no_adversary_ats,
        content_mutated_nodes: 0,
        metrics,
        trajectory,
    })
}

fn sample_set(set: &BTreeSet<NodeId>, size: usize, rng: &mut ChaCha8Rng) -> BTreeSet<NodeId> {
    if set.len() <= size {
        return set.clone();
    }
    let mut items: Vec<NodeId> = set.iter().copied().collect();
    for i in 0..size {
        let j = rng.gen_range(i..items.len());
        items.swap(i, j);
    }
    items.truncate(size);
    items.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::parse_trace_str;
    use crate::graph::{build_graph, GraphConfig};

    const FIXTURE: &str = include_str!("../tests/fixtures/code1_listing1.jsonl");

    fn fixture_graph() -> PageGraph {
        let trace = parse_trace_str(FIXTURE).unwrap();
        build_graph(&trace, &GraphConfig { min_value_len: 5 })
    }

    fn policy(kinds: &[UrlMutationKind]) -> MutationPolicy {
        kinds.iter().copied().collect()
    }

    #[test]
    fn domain_mutation_preserves_path_and_query() {
        let psl = SuffixList::default();
        let mut rng = seed::stream(1, "t", 0);
        let out = mutate_url_content(
            "http://t.ads.com/p?a=1",
            &policy(&[UrlMutationKind::Domain]),
            &psl,
            &mut rng,
        )
        .unwrap();
        let parts = UrlParts::parse(&out).unwrap();
        assert_eq!(parts.path, "/p");
        assert_eq!(parts.query.as_deref(), Some("a=1"));
        assert_ne!(psl.registrable_domain(&parts.host), "ads.com");
        assert!(parts.host.starts_with("t."), "subdomain kept: {}", parts.host);
        assert!(parts.host.ends_with(".com"));
    }

    #[test]
    fn query_value_mutation_keeps_names() {
        let psl = SuffixList::default();
        let mut rng = seed::stream(2, "t", 0);
        let out = mutate_url_content(
            "http://t.ads.com/p?uid=abcdef123456&ref=example.com",
            &policy(&[UrlMutationKind::QueryValues]),
            &psl,
            &mut rng,
        )
        .unwrap();
        let parts = UrlParts::parse(&out).unwrap();
        let pairs = parts.query_pairs();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, "uid");
        assert_eq!(pairs[1].0, "ref");
        assert_ne!(pairs[0].1, "abcdef123456");
        assert_eq!(parts.host, "t.ads.com");
    }

    #[test]
    fn mutation_is_deterministic_per_seed() {
        let psl = SuffixList::default();
        let all: MutationPolicy = UrlMutationKind::ALL.into_iter().collect();
        let url = "http://sub.tracker.com/x/y?a=1&b=2";
        let a = mutate_url_content(url, &all, &psl, &mut seed::stream(9, "t", 4)).unwrap();
        let b = mutate_url_content(url, &all, &psl, &mut seed::stream(9, "t", 4)).unwrap();
        let c = mutate_url_content(url, &all, &psl, &mut seed::stream(9, "t", 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unparseable_url_is_rejected() {
        let psl = SuffixList::default();
        let mut rng = seed::stream(0, "t", 0);
        assert!(mutate_url_content("::::", &policy(&[UrlMutationKind::Domain]), &psl, &mut rng)
            .is_err());
    }

    #[test]
    fn collusion_moves_host_under_first_party() {
        let mut rng = seed::stream(3, "t", 0);
        let out =
            collude_first_party("http://tracker.com/x?id=1", "example.com", &mut rng).unwrap();
        let parts = UrlParts::parse(&out).unwrap();
        assert!(parts.host.ends_with(".example.com"));
        assert_eq!(parts.path, "/x");
        assert_eq!(parts.query.as_deref(), Some("id=1"));
    }

    #[test]
    fn worked_example_metrics() {
        let counts = SwitchCounts {
            ats_adv: 5,
            non_ats_adv: 7,
            non_ats_web: 62,
            ats_web: 13,
            desired: 3,
            undesired: 7,
            neutral: 1,
        };
        let m = metrics_from_counts(counts, false);
        assert!((m.success_rate_pct.unwrap() - 60.00).abs() < 0.01);
        assert!((m.collateral_damage_pct.unwrap() - 10.14).abs() < 0.01);
        assert!((m.other_changes_pct.unwrap() - 7.69).abs() < 0.01);
        let careless = metrics_from_counts(counts, true);
        assert!((careless.collateral_damage_pct.unwrap() - 100.0).abs() < 0.01);
    }

    #[test]
    fn careless_collateral_ignores_web_denominator() {
        let counts = SwitchCounts {
            ats_adv: 2,
            non_ats_adv: 4,
            non_ats_web: 10_000,
            ats_web: 1,
            desired: 0,
            undesired: 2,
            neutral: 0,
        };
        let m = metrics_from_counts(counts, true);
        assert!((m.collateral_damage_pct.unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn zero_denominators_are_guarded() {
        let m = metrics_from_counts(SwitchCounts::default(), false);
        assert_eq!(m.success_rate_pct, None);
        assert_eq!(m.collateral_damage_pct, None);
        assert_eq!(m.other_changes_pct, None);
        let some = metrics_from_counts(
            SwitchCounts { ats_adv: 3, ..Default::default() },
            false,
        );
        assert_eq!(some.success_rate_pct, Some(0.0));
    }

    #[test]
    fn added_ats_nodes_count_as_undesired() {
        let pre: BTreeMap<NodeId, bool> = [(0, true), (1, false)].into_iter().collect();
        let post: BTreeMap<NodeId, bool> =
            [(0, true), (1, false), (9, true), (10, false)].into_iter().collect();
        let adversary: BTreeSet<NodeId> = [0, 9, 10].into_iter().collect();
        let m = compute_metrics(&pre, &post, &adversary, false);
        assert_eq!(m.counts.undesired, 1);
        assert_eq!(m.counts.desired, 0);
    }

    #[test]
    fn fixture_adversary_scope_owns_descendants() {
        let g = fixture_graph();
        let psl = SuffixList::default();
        let scope = AdversaryScope::for_domain(&g, "tracker2.com", &psl);
        // Sync request, its redirect target, the set cookie, the iframe fetch,
        // the iframe script, its cookie, and the XHR it initiated.
        assert!(scope.nodes.len() >= 6);
        let urls: Vec<&str> = scope
            .nodes
            .iter()
            .filter_map(|&n| g.url_of(n))
            .collect();
        assert!(urls.iter().any(|u| u.contains("tracker2_id=user1")));
        assert!(urls.iter().any(|u| u.contains("tracker3.com")));
    }

    #[test]
    fn candidate_rules_follow_scope_and_collusion() {
        let g = fixture_graph();
        let psl = SuffixList::default();
        let scope = AdversaryScope::for_domain(&g, "tracker2.com", &psl);
        let ctx = CandidateCtx {
            seed: 5,
            iteration: 0,
            adversary_domain: "tracker2.com",
            first_party: "example.com",
            synth_mode: SynthUrlMode::AdversaryDomain,
        };
        let candidates = candidate_mutations(&g, &scope.nodes, false, &ctx);
        for m in &candidates {
            if let Mutation::AddResource { parent, .. } = m {
                assert!(scope.nodes.contains(parent));
            }
        }
        assert!(candidates.iter().any(|m| matches!(m, Mutation::Reroute { .. })));
        assert!(candidates.iter().any(|m| matches!(m, Mutation::Obfuscate { .. })));
        // tracker1.com owns no redirect chain head and no still-carried value
        // of its own storage: userA never appears in a URL.
        let scope1 = AdversaryScope::for_domain(&g, "tracker1.com", &psl);
        let ctx1 = CandidateCtx { adversary_domain: "tracker1.com", ..ctx };
        let candidates1 = candidate_mutations(&g, &scope1.nodes, false, &ctx1);
        assert!(candidates1.iter().all(|m| !matches!(m, Mutation::Obfuscate { .. })));
        // With collusion any non-storage node may gain a child.
        let colluding = candidate_mutations(&g, &scope.nodes, true, &ctx);
        let parent_count = colluding
            .iter()
            .filter(|m| matches!(m, Mutation::AddResource { .. }))
            .count();
        assert_eq!(parent_count, 2 * g.nodes.iter().filter(|n| !n.kind.is_storage()).count());
    }

    #[test]
    fn add_resource_grows_by_one_node_and_edge() {
        let g = fixture_graph();
        let m = Mutation::AddResource {
            parent: 0,
            resource_type: ResourceType::Image,
            url: "http://tracker2.com/res-abc123".to_string(),
        };
        let g2 = apply_mutation(&g, &m).unwrap();
        assert_eq!(g2.node_count(), g.node_count() + 1);
        assert_eq!(g2.edges.len(), g.edges.len() + 1);
        g2.check_edge_domains().unwrap();
    }

    #[test]
    fn reroute_removes_chain_redirects() {
        let text = r#"{"record":"page","page_url":"http://www.example.com/","first_party":"example.com"}
{"record":"event","kind":"script_source","ts":1,"script_id":"s1","url":null,"parent_element":null,"is_eval":false}
{"record":"event","kind":"request","ts":2,"request_id":"r1","url":"http://adv.com/a","resource_type":"image","initiator":{"kind":"script","id":"s1"},"cookie_keys":[]}
{"record":"event","kind":"redirect","ts":3,"request_id":"r1","new_request_id":"r2","to_url":"http://adv.com/b"}
{"record":"event","kind":"redirect","ts":4,"request_id":"r2","new_request_id":"r3","to_url":"http://adv.com/c"}"#;
        let trace = parse_trace_str(text).unwrap();
        let g = build_graph(&trace, &GraphConfig::default());
        let redirects = |g: &PageGraph| {
            g.edges.iter().filter(|e| e.kind == EdgeKind::Redirect).count()
        };
        assert_eq!(redirects(&g), 2);
        let m = Mutation::Reroute { chain_head: 1, scripts: vec![0] };
        let g2 = apply_mutation(&g, &m).unwrap();
        assert_eq!(redirects(&g2), 0);
        assert_eq!(g2.node_count(), g.node_count());
        let initiated = g2
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::InitiatesRequest && e.src == 0)
            .count();
        assert_eq!(initiated, 3);
    }

    #[test]
    fn obfuscation_severs_shared_value_edges() {
        let g = fixture_graph();
        let idx = g
            .page
            .storage_values
            .iter()
            .position(|sv| sv.value == "user1")
            .unwrap();
        let flow_before = g.flow_edges().count();
        let g2 = apply_mutation(&g, &Mutation::Obfuscate { value_index: idx }).unwrap();
        let flow_after = g2.flow_edges().count();
        assert!(flow_after < flow_before);
        assert_eq!(
            g2.edges.iter().filter(|e| matches!(e.kind, EdgeKind::SharedValue { .. })).count(),
            0
        );
        // The stored value survives; only its URL occurrences are encoded.
        assert_eq!(g2.page.storage_values[idx].value, "user1");
        let urls = g2.network_urls();
        assert!(urls.iter().all(|(_, _, u)| !crate::graph::url_tokens(u).contains(&"user1".to_string())));
        assert!(urls.iter().any(|(_, _, u)| u.contains(&obfuscate_value("user1"))));
    }

    #[test]
    fn obfuscation_transform_is_outside_detector_set() {
        let value = "user1";
        let obf = obfuscate_value(value);
        for t in DETECTOR_TRANSFORMS {
            assert_ne!(obf, transform_value(value, t));
        }
        assert_eq!(obf, "3172657375");
    }
}
