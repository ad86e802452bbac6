//! Independent oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sarl_core::seed;
use sarl_core::ReasoningMap;

/// Adjacency matrix of a graph.
pub fn adjacency(g: &ReasoningMap) -> Vec<Vec<bool>> {
    let n = g.num_nodes();
    let mut m = vec![vec![false; n]; n];
    for (a, b) in g.edges() {
        m[a][b] = true;
        m[b][a] = true;
    }
    m
}

/// Mean local clustering by explicit triangle enumeration over node
/// triples.
pub fn clustering_by_triangles(g: &ReasoningMap) -> f64 {
    let m = adjacency(g);
    let n = m.len();
    let mut sum = 0.0;
    let mut count = 0;
    for v in 0..n {
        let deg = (0..n).filter(|&u| m[v][u]).count();
        if deg < 2 {
            continue;
        }
        let mut triangles = 0u64;
        for a in 0..n {
            for b in a + 1..n {
                if m[v][a] && m[v][b] && m[a][b] {
                    triangles += 1;
                }
            }
        }
        let possible = (deg * (deg - 1) / 2) as u64;
        sum += triangles as f64 / possible as f64;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean hop distance over reachable distinct pairs by Floyd–Warshall.
#[allow(clippy::needless_range_loop)]
pub fn path_length_floyd_warshall(g: &ReasoningMap) -> Option<f64> {
    let m = adjacency(g);
    let n = m.len();
    const INF: u64 = u64::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if m[i][j] {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let (mut total, mut pairs) = (0u64, 0u64);
    for i in 0..n {
        for j in 0..n {
            if i != j && d[i][j] < INF {
                total += d[i][j];
                pairs += 1;
            }
        }
    }
    (pairs > 0).then(|| total as f64 / pairs as f64)
}

/// Erdős–Rényi graph.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> ReasoningMap {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    ReasoningMap::from_edges(n, edges)
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as u64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let expected = rows * cols / choose2(n);
    let max = (rows + cols) / 2.0;
    if (max - expected).abs() < 1e-15 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Relabels by first occurrence, for comparing clusterings up to ids.
pub fn canonical(labels: &[usize]) -> Vec<usize> {
    sarl_core::cluster::compact_first_occurrence(labels).0
}

/// Isotropic Gaussian blobs around orthogonal unit centres, centre
/// distance `separation_sigmas * σ`, each point then unit-normalized.
/// Returns points and ground-truth blob ids.
pub fn unit_blobs(
    sizes: &[usize],
    dim: usize,
    separation_sigmas: f64,
    seed_: u64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    assert!(sizes.len() <= dim);
    let center_dist = std::f64::consts::SQRT_2;
    let sigma = center_dist / separation_sigmas;
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = seed::rng(seed_);
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (b, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let v: Vec<f64> = (0..dim)
                .map(|j| if j == b { 1.0 } else { 0.0 } + normal.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            pts.push(v.into_iter().map(|x| x / norm).collect());
            truth.push(b);
        }
    }
    (pts, truth)
}

pub fn one_hot(i: usize, d: usize) -> Vec<f64> {
    (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
}

/// Reasoning-style text for a trace, with a few recurring step templates.
pub fn synthetic_text(i: usize, steps: usize) -> String {
    const TEMPLATES: [&str; 6] = [
        "Let me restate the problem in my own words",
        "Set up the equation for the unknown quantity",
        "Simplify both sides of the equation",
        "Check the result by substituting back",
        "Wait, maybe there is a different approach",
        "So the answer should be the boxed value",
    ];
    let mut rng = seed::rng(i as u64);
    let body: Vec<String> = (0..steps)
        .map(|s| {
            let t = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
            format!("{t} (step {})", s % 3)
        })
        .collect();
    format!("<think>\n{}\n</think>\nThe answer is {i}.", body.join("\n"))
}
