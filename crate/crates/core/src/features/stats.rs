//! Per-view graph statistics: degrees, BFS-based centralities, reachability.
//!
//! Centralities are computed on the undirected view of the selected edge set,
//! per connected component; isolated nodes score zero. Closeness uses the
//! component-size normalized form so values stay comparable across components.

use crate::graph::NodeId;

/// Adjacency over one edge subset of a graph.
pub struct View {
    n: usize,
    /// Nodes the view semantically contains; normalizes closeness when the
    /// id space is shared with a larger graph.
    effective_n: usize,
    pub out_deg: Vec<usize>,
    pub in_deg: Vec<usize>,
    /// Deduped undirected neighbors.
    undirected: Vec<Vec<NodeId>>,
    /// Reverse adjacency for ancestor reachability; an edge marked
    /// bidirectional contributes arcs both ways.
    reverse: Vec<Vec<NodeId>>,
    forward: Vec<Vec<NodeId>>,
    pub edge_count: usize,
}

impl View {
    /// `edges` yields `(src, dst, bidirectional_for_reachability)`.
    pub fn new(n: usize, edges: impl Iterator<Item = (NodeId, NodeId, bool)>) -> Self {
        Self::with_effective_n(n, n, edges)
    }

    /// A view over a shared id space of `n` slots that semantically contains
    /// only `effective_n` nodes (the rest must stay isolated).
    pub fn with_effective_n(
        n: usize,
        effective_n: usize,
        edges: impl Iterator<Item = (NodeId, NodeId, bool)>,
    ) -> Self {
        let mut out_deg = vec![0usize; n];
        let mut in_deg = vec![0usize; n];
        let mut undirected = vec![Vec::new(); n];
        let mut reverse = vec![Vec::new(); n];
        let mut forward = vec![Vec::new(); n];
        let mut edge_count = 0usize;
        for (src, dst, bidir) in edges {
            edge_count += 1;
            out_deg[src] += 1;
            in_deg[dst] += 1;
            undirected[src].push(dst);
            undirected[dst].push(src);
            reverse[dst].push(src);
            forward[src].push(dst);
            if bidir {
                reverse[src].push(dst);
            }
        }
        for adj in &mut undirected {
            adj.sort_unstable();
            adj.dedup();
        }
        Self { n, effective_n, out_deg, in_deg, undirected, reverse, forward, edge_count }
    }

    pub fn node_count(&self) -> usize {
        self.effective_n
    }

    pub fn total_degree(&self, v: NodeId) -> usize {
        self.in_deg[v] + self.out_deg[v]
    }

    /// Mean total degree of the node's distinct neighbors; 0 without neighbors.
    pub fn avg_degree_connectivity(&self, v: NodeId) -> f64 {
        let neighbors = &self.undirected[v];
        if neighbors.is_empty() {
            return 0.0;
        }
        let sum: usize = neighbors.iter().map(|&u| self.total_degree(u)).sum();
        sum as f64 / neighbors.len() as f64
    }

    /// Undirected BFS distances; `None` for unreachable nodes.
    fn bfs(&self, start: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.n];
        dist[start] = Some(0);
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].expect("queued nodes have distances");
            for &u in &self.undirected[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// `(closeness, eccentricity)` of `v` over the undirected view.
    pub fn centrality(&self, v: NodeId) -> (f64, f64) {
        if self.effective_n <= 1 {
            return (0.0, 0.0);
        }
        let dist = self.bfs(v);
        let mut comp = 0usize;
        let mut sum = 0u64;
        let mut ecc = 0u32;
        for d in dist.iter().flatten() {
            comp += 1;
            sum += u64::from(*d);
            ecc = ecc.max(*d);
        }
        if comp <= 1 || sum == 0 {
            return (0.0, 0.0);
        }
        let reachable = (comp - 1) as f64;
        let closeness = (reachable / (self.effective_n - 1) as f64) * (reachable / sum as f64);
        (closeness, f64::from(ecc))
    }

    /// Number of nodes from which `v` is reachable, excluding `v` itself.
    pub fn ancestor_count(&self, v: NodeId) -> usize {
        self.ancestors(v).len()
    }

    /// Set of nodes from which `v` is reachable, excluding `v` itself.
    pub fn ancestors(&self, v: NodeId) -> Vec<NodeId> {
        let mut seen = vec![false; self.n];
        seen[v] = true;
        let mut stack = vec![v];
        let mut out = Vec::new();
        while let Some(cur) = stack.pop() {
            for &p in &self.reverse[cur] {
                if !seen[p] {
                    seen[p] = true;
                    out.push(p);
                    stack.push(p);
                }
            }
        }
        out
    }

    /// Distinct direct predecessors of `v`.
    pub fn parents(&self, v: NodeId) -> Vec<NodeId> {
        let mut p: Vec<NodeId> = self.reverse[v].clone();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// Distinct direct successors of `v`.
    pub fn children(&self, v: NodeId) -> Vec<NodeId> {
        let mut c: Vec<NodeId> = self.forward[v].clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Distinct other children of `v`'s parents.
    pub fn sibling_count(&self, v: NodeId) -> usize {
        let mut siblings = std::collections::BTreeSet::new();
        for p in self.parents(v) {
            for c in self.children(p) {
                if c != v {
                    siblings.insert(c);
                }
            }
        }
        siblings.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> View {
        // A -> B -> C
        View::new(3, [(0, 1, false), (1, 2, false)].into_iter())
    }

    #[test]
    fn degrees_on_a_path() {
        let v = path3();
        assert_eq!(v.in_deg, vec![0, 1, 1]);
        assert_eq!(v.out_deg, vec![1, 1, 0]);
        assert_eq!(v.total_degree(1), 2);
    }

    #[test]
    fn eccentricity_of_path_endpoint() {
        let v = path3();
        let (_, ecc) = v.centrality(2);
        assert_eq!(ecc, 2.0);
    }

    #[test]
    fn isolated_node_scores_zero() {
        let v = View::new(3, [(0, 1, false)].into_iter());
        assert_eq!(v.centrality(2), (0.0, 0.0));
        assert_eq!(v.avg_degree_connectivity(2), 0.0);
        assert_eq!(v.ancestor_count(2), 0);
    }

    #[test]
    fn closeness_is_component_normalized() {
        // Pair component inside a 4-node graph: closeness < 1 because the
        // component only covers part of the graph.
        let v = View::new(4, [(0, 1, false), (2, 3, false)].into_iter());
        let (c, _) = v.centrality(0);
        assert!((c - (1.0 / 3.0)).abs() < 1e-12);
        // Star center covering the whole graph hits 1.0.
        let star = View::new(4, [(0, 1, false), (0, 2, false), (0, 3, false)].into_iter());
        let (c, _) = star.centrality(0);
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ancestors_follow_direction_and_bidir_edges() {
        let v = View::new(4, [(0, 1, false), (1, 2, false), (3, 2, true)].into_iter());
        let mut a = v.ancestors(2);
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 3]);
        // The bidirectional edge also makes 2 an ancestor of 3.
        let mut b = v.ancestors(3);
        b.sort_unstable();
        assert_eq!(b, vec![0, 1, 2]);
        assert_eq!(v.ancestor_count(0), 0);
    }

    #[test]
    fn avg_degree_connectivity_means_neighbor_degrees() {
        let v = path3();
        // Node 1's neighbors are the endpoints, each with degree 1.
        assert_eq!(v.avg_degree_connectivity(1), 1.0);
        // Endpoint 0's only neighbor is the middle with degree 2.
        assert_eq!(v.avg_degree_connectivity(0), 2.0);
    }
}
