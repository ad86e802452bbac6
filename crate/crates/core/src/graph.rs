//! The per-response Reasoning Map and its small-world Structure Reward.
//!
//! Nodes are latent reasoning types; an undirected edge joins two types
//! whenever consecutive steps move between them. The reward combines local
//! clustering ("local depth", `C/2`) with short global paths ("global flow",
//! `1/(1+L)`), and lies in `[0, 1]`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;

/// A simple undirected graph over cluster ids `0..num_nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningMap {
    num_nodes: usize,
    /// Sorted neighbour sets.
    adjacency: Vec<BTreeSet<usize>>,
    /// Member-step count per node, when built from an assignment.
    node_weights: Vec<usize>,
}

impl ReasoningMap {
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            adjacency: vec![BTreeSet::new(); num_nodes],
            node_weights: vec![0; num_nodes],
        }
    }

    /// Builds a graph from an explicit edge list. Self-loops and duplicate
    /// edges are ignored.
    ///
    /// # Panics
    /// If an endpoint is `>= num_nodes`.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = Self::empty(num_nodes);
        for (a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    /// Builds the map from per-step labels: one edge per distinct pair of
    /// consecutive, differing labels.
    pub fn from_assignment(assignment: &ClusterAssignment) -> Self {
        let mut g = Self::from_labels(assignment.k, &assignment.labels);
        g.node_weights = assignment.sizes();
        g
    }

    /// Like [`from_assignment`](Self::from_assignment) but from raw labels
    /// in `[0, num_nodes)`.
    pub fn from_labels(num_nodes: usize, labels: &[usize]) -> Self {
        let mut g = Self::empty(num_nodes);
        for &l in labels {
            g.node_weights[l] += 1;
        }
        for w in labels.windows(2) {
            g.add_edge(w[0], w[1]);
        }
        g
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        assert!(
            a < self.num_nodes && b < self.num_nodes,
            "edge ({a}, {b}) out of range"
        );
        if a != b {
            self.adjacency[a].insert(b);
            self.adjacency[b].insert(a);
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, node: usize) -> &BTreeSet<usize> {
        &self.adjacency[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&b)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Edges as `(min, max)` pairs in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    pub fn node_weights(&self) -> &[usize] {
        &self.node_weights
    }

    /// Whether the reward is undefined for this graph (fewer than two nodes
    /// or no edges).
    pub fn is_degenerate(&self) -> bool {
        self.num_nodes < 2 || self.num_edges() == 0
    }

    /// Graphviz rendering: one node per cluster labelled with its step
    /// count, one line per edge.
    pub fn to_dot(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "graph \"{}\" {{", name.replace('"', "\\\""));
        for (v, w) in self.node_weights.iter().enumerate() {
            let _ = writeln!(out, "  {v} [label=\"{v} ({w} steps)\", steps={w}];");
        }
        for (a, b) in self.edges() {
            let _ = writeln!(out, "  {a} -- {b};");
        }
        out.push_str("}\n");
        out
    }
}

/// Mean local clustering coefficient over nodes of degree ≥ 2; 0 when there
/// are none.
pub fn clustering_coefficient(g: &ReasoningMap) -> f64 {
    let mut local = Vec::new();
    for v in 0..g.num_nodes() {
        let ns: Vec<usize> = g.neighbors(v).iter().copied().collect();
        let deg = ns.len();
        if deg < 2 {
            continue;
        }
        let mut links = 0usize;
        for (i, &a) in ns.iter().enumerate() {
            for &b in &ns[i + 1..] {
                if g.has_edge(a, b) {
                    links += 1;
                }
            }
        }
        local.push(links as f64 / (deg * (deg - 1) / 2) as f64);
    }
    if local.is_empty() {
        return 0.0;
    }
    // Summing in sorted order makes the result independent of node labels.
    local.sort_by(f64::total_cmp);
    local.iter().sum::<f64>() / local.len() as f64
}

/// Exact hop-count path statistics over unordered reachable pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStats {
    pub total_hops: u64,
    pub pairs: u64,
}

impl PathStats {
    pub fn mean(&self) -> Option<f64> {
        (self.pairs > 0).then(|| self.total_hops as f64 / self.pairs as f64)
    }
}

/// Breadth-first search from every node, accumulating distances to
/// higher-numbered reachable nodes.
pub fn path_stats(g: &ReasoningMap) -> PathStats {
    let n = g.num_nodes();
    let mut stats = PathStats {
        total_hops: 0,
        pairs: 0,
    };
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        if g.degree(src) == 0 {
            continue;
        }
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[src] = 0;
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            for &w in g.neighbors(v) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        for &d in dist.iter().skip(src + 1) {
            if d != usize::MAX {
                stats.total_hops += d as u64;
                stats.pairs += 1;
            }
        }
    }
    stats
}

/// Mean shortest-path hop count over distinct reachable pairs, or `None`
/// when no such pair exists.
pub fn avg_path_length(g: &ReasoningMap) -> Option<f64> {
    path_stats(g).mean()
}

/// The Structure Reward and its decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub sr: f64,
    pub local_depth: f64,
    pub global_flow: f64,
    pub c: f64,
    /// `None` when no pair of distinct nodes is connected.
    pub l: Option<f64>,
    pub degenerate: bool,
}

impl StructureScore {
    pub fn degenerate(reward: f64, c: f64, l: Option<f64>) -> Self {
        Self {
            sr: reward,
            local_depth: 0.0,
            global_flow: 0.0,
            c,
            l,
            degenerate: true,
        }
    }
}

/// `SR = C/2 + 1/(1+L)`. Degenerate maps (fewer than two nodes, or no
/// edges) score 0.
pub fn structure_reward(g: &ReasoningMap) -> StructureScore {
    structure_reward_with(g, 0.0)
}

/// As [`structure_reward`], with the value assigned to degenerate maps.
pub fn structure_reward_with(g: &ReasoningMap, degenerate_reward: f64) -> StructureScore {
    let c = clustering_coefficient(g);
    let l = avg_path_length(g);
    match l {
        Some(l) if !g.is_degenerate() => {
            let local_depth = c / 2.0;
            let global_flow = 1.0 / (1.0 + l);
            StructureScore {
                sr: local_depth + global_flow,
                local_depth,
                global_flow,
                c,
                l: Some(l),
                degenerate: false,
            }
        }
        _ => StructureScore::degenerate(degenerate_reward, c, l),
    }
}
