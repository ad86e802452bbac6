//! HDBSCAN over Euclidean distance.
//!
//! Core distances → mutual-reachability graph → minimum spanning tree (Prim)
//! → single-linkage hierarchy → condensed tree at `min_cluster_size` →
//! excess-of-mass selection. The root is never selected, so a dataset with
//! no stable split is all noise.

use super::{
    check_dims, sq_dist, ClusterAssignment, ClusterConfig, ClusterError, ClusterMethod, NoisePolicy,
};

/// Cap on λ = 1/distance, so exact duplicates (distance 0) yield finite
/// stabilities.
const MAX_LAMBDA: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Neighbourhood size for core distances, counting the point itself.
    pub min_samples: usize,
}

impl HdbscanParams {
    /// `min_cluster_size = max(2, min(5, m / 4))` with floor division, and
    /// `min_samples = min_cluster_size - 1`.
    pub fn for_size(m: usize) -> Self {
        let min_cluster_size = (m / 4).clamp(2, 5);
        Self {
            min_cluster_size,
            min_samples: min_cluster_size - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HdbscanFit {
    pub assignment: ClusterAssignment,
    /// Selected-cluster index per point before noise handling; `None` is noise.
    pub raw_labels: Vec<Option<usize>>,
    pub params: HdbscanParams,
    /// Stability of each selected cluster, by raw label.
    pub stabilities: Vec<f64>,
}

impl HdbscanFit {
    pub fn noise_count(&self) -> usize {
        self.raw_labels.iter().filter(|l| l.is_none()).count()
    }
}

pub fn hdbscan<P: AsRef<[f64]>>(
    points: &[P],
    cfg: &ClusterConfig,
) -> Result<ClusterAssignment, ClusterError> {
    hdbscan_fit(points, cfg).map(|fit| fit.assignment)
}

pub fn hdbscan_fit<P: AsRef<[f64]>>(
    points: &[P],
    cfg: &ClusterConfig,
) -> Result<HdbscanFit, ClusterError> {
    check_dims(points)?;
    let params = HdbscanParams::for_size(points.len());
    let pts: Vec<&[f64]> = points.iter().map(AsRef::as_ref).collect();
    let (raw_labels, stabilities) = run(&pts, params);
    let assignment = resolve_noise(&raw_labels, cfg.noise_policy, cfg.seed);
    Ok(HdbscanFit {
        assignment,
        raw_labels,
        params,
        stabilities,
    })
}

fn resolve_noise(raw: &[Option<usize>], policy: NoisePolicy, seed: u64) -> ClusterAssignment {
    let clusters = raw.iter().flatten().max().map_or(0, |m| m + 1);
    let ids: Vec<usize> = if clusters == 0 {
        vec![0; raw.len()]
    } else {
        let mut next_noise = clusters;
        raw.iter()
            .map(|l| match (l, policy) {
                (Some(c), _) => *c,
                (None, NoisePolicy::Merged) => clusters,
                (None, NoisePolicy::Singletons) => {
                    next_noise += 1;
                    next_noise
                }
            })
            .collect()
    };
    ClusterAssignment::from_raw_labels(&ids, ClusterMethod::Hdbscan, seed)
}

/// Returns per-point selected cluster (or noise) and the selected clusters'
/// stabilities.
fn run(pts: &[&[f64]], params: HdbscanParams) -> (Vec<Option<usize>>, Vec<f64>) {
    let n = pts.len();
    if n < 2 {
        return (vec![None; n], Vec::new());
    }
    let mst = mutual_reachability_mst(pts, params.min_samples);
    let hierarchy = single_linkage(n, mst);
    let tree = CondensedTree::build(n, &hierarchy, params.min_cluster_size);
    let selected = tree.select_eom();
    let labels = tree.label_points(n, &selected);
    let stabilities = selected.iter().map(|&c| tree.stability[c]).collect();
    (labels, stabilities)
}

fn lambda_of(dist: f64) -> f64 {
    if dist > 0.0 {
        (1.0 / dist).min(MAX_LAMBDA)
    } else {
        MAX_LAMBDA
    }
}

/// Prim's algorithm on the dense mutual-reachability graph. Ties go to the
/// lowest vertex index. Edges are returned sorted by weight, stable.
fn mutual_reachability_mst(pts: &[&[f64]], min_samples: usize) -> Vec<(usize, usize, f64)> {
    let n = pts.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sq_dist(pts[i], pts[j]).sqrt()).collect())
        .collect();
    let kth = min_samples.clamp(1, n) - 1;
    let core: Vec<f64> = dist
        .iter()
        .map(|row| {
            let mut sorted = row.clone();
            sorted.sort_by(f64::total_cmp);
            sorted[kth]
        })
        .collect();
    let mreach = |i: usize, j: usize| dist[i][j].max(core[i]).max(core[j]);

    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if !in_tree[j] {
                let d = mreach(current, j);
                if d < best[j] {
                    best[j] = d;
                    parent[j] = current;
                }
            }
        }
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((parent[next], next, best[next]));
        current = next;
    }
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    edges
}

#[derive(Debug, Clone, Copy)]
struct Merge {
    left: usize,
    right: usize,
    dist: f64,
    size: usize,
}

/// Single-linkage dendrogram: merge `i` creates node `n + i`.
fn single_linkage(n: usize, mst: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut size = vec![1usize; 2 * n - 1];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    mst.into_iter()
        .enumerate()
        .map(|(i, (a, b, dist))| {
            let left = find(&mut parent, a);
            let right = find(&mut parent, b);
            let node = n + i;
            parent[left] = node;
            parent[right] = node;
            size[node] = size[left] + size[right];
            Merge {
                left,
                right,
                dist,
                size: size[node],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Child {
    Point(usize),
    Cluster(usize),
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    parent: usize,
    child: Child,
    lambda: f64,
    size: usize,
}

/// Condensed cluster tree. Cluster 0 is the root; children always carry
/// larger ids than their parents.
struct CondensedTree {
    edges: Vec<Edge>,
    num_clusters: usize,
    cluster_parent: Vec<Option<usize>>,
    stability: Vec<f64>,
}

impl CondensedTree {
    fn build(n: usize, hierarchy: &[Merge], min_cluster_size: usize) -> Self {
        let root = 2 * n - 2;
        let node_size = |node: usize| {
            if node < n {
                1
            } else {
                hierarchy[node - n].size
            }
        };
        let children = |node: usize| {
            let m = hierarchy[node - n];
            [m.left, m.right]
        };
        let leaves_under = |node: usize| {
            let mut out = Vec::new();
            let mut stack = vec![node];
            while let Some(x) = stack.pop() {
                if x < n {
                    out.push(x);
                } else {
                    stack.extend(children(x));
                }
            }
            out.sort_unstable();
            out
        };

        let mut relabel = vec![usize::MAX; 2 * n - 1];
        relabel[root] = 0;
        let mut next_label = 1;
        let mut cluster_parent = vec![None];
        let mut edges = Vec::new();

        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(node) = queue.pop_front() {
            if node < n {
                continue;
            }
            let merge = hierarchy[node - n];
            let lambda = lambda_of(merge.dist);
            let parent = relabel[node];
            let (left, right) = (merge.left, merge.right);
            let (ls, rs) = (node_size(left), node_size(right));
            let big_l = ls >= min_cluster_size;
            let big_r = rs >= min_cluster_size;

            for (child, size, big, other_big) in
                [(left, ls, big_l, big_r), (right, rs, big_r, big_l)]
            {
                if big && other_big {
                    relabel[child] = next_label;
                    cluster_parent.push(Some(parent));
                    edges.push(Edge {
                        parent,
                        child: Child::Cluster(next_label),
                        lambda,
                        size,
                    });
                    next_label += 1;
                    queue.push_back(child);
                } else if big {
                    // The surviving side continues the parent cluster.
                    relabel[child] = parent;
                    queue.push_back(child);
                } else {
                    for p in leaves_under(child) {
                        edges.push(Edge {
                            parent,
                            child: Child::Point(p),
                            lambda,
                            size: 1,
                        });
                    }
                }
            }
        }

        let num_clusters = next_label;
        let mut birth = vec![0.0; num_clusters];
        for e in &edges {
            if let Child::Cluster(c) = e.child {
                birth[c] = e.lambda;
            }
        }
        let mut stability = vec![0.0; num_clusters];
        for e in &edges {
            stability[e.parent] += (e.lambda - birth[e.parent]) * e.size as f64;
        }
        Self {
            edges,
            num_clusters,
            cluster_parent,
            stability,
        }
    }

    /// Excess-of-mass selection over all non-root clusters.
    fn select_eom(&self) -> Vec<usize> {
        let mut stability = self.stability.clone();
        let mut is_cluster = vec![true; self.num_clusters];
        is_cluster[0] = false;
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); self.num_clusters];
        for c in 1..self.num_clusters {
            if let Some(p) = self.cluster_parent[c] {
                kids[p].push(c);
            }
        }
        for node in (1..self.num_clusters).rev() {
            let subtree: f64 = kids[node].iter().map(|&c| stability[c]).sum();
            if subtree > stability[node] {
                is_cluster[node] = false;
                stability[node] = subtree;
            } else {
                let mut stack = kids[node].clone();
                while let Some(d) = stack.pop() {
                    is_cluster[d] = false;
                    stack.extend(&kids[d]);
                }
            }
        }
        (1..self.num_clusters).filter(|&c| is_cluster[c]).collect()
    }

    fn label_points(&self, n: usize, selected: &[usize]) -> Vec<Option<usize>> {
        let mut raw_of = vec![None; self.num_clusters];
        for (i, &c) in selected.iter().enumerate() {
            raw_of[c] = Some(i);
        }
        let mut labels = vec![None; n];
        for e in &self.edges {
            if let Child::Point(p) = e.child {
                let mut c = Some(e.parent);
                while let Some(cl) = c {
                    if let Some(l) = raw_of[cl] {
                        labels[p] = Some(l);
                        break;
                    }
                    c = self.cluster_parent[cl];
                }
            }
        }
        labels
    }
}
