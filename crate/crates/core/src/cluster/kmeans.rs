//! Lloyd's algorithm with k-means++ seeding.

use rand::Rng;

use super::{check_dims, sq_dist, ClusterAssignment, ClusterConfig, ClusterError, ClusterMethod};
use crate::seed;

/// Full KMeans output, including the diagnostics tests rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: ClusterAssignment,
    /// Final centroids of the non-empty clusters, indexed by label.
    pub centroids: Vec<Vec<f64>>,
    /// WCSS after each assignment step, first to last.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn wcss(&self) -> f64 {
        *self
            .wcss_history
            .last()
            .expect("at least one assignment step")
    }
}

pub fn kmeans<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    cfg: &ClusterConfig,
) -> Result<ClusterAssignment, ClusterError> {
    kmeans_fit(points, k, cfg).map(|fit| fit.assignment)
}

pub fn kmeans_fit<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    cfg: &ClusterConfig,
) -> Result<KMeansFit, ClusterError> {
    cfg.validate()?;
    let dim = check_dims(points)?;
    let n = points.len();
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }
    let pts: Vec<&[f64]> = points.iter().map(AsRef::as_ref).collect();

    let mut centroids = plus_plus_init(&pts, k, cfg.seed);
    let mut labels = vec![0usize; n];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.kmeans_max_iter {
        iterations += 1;
        let wcss = assign(&pts, &centroids, &mut labels);
        push_wcss(&mut wcss_history, wcss);

        let updated = update_centroids(&pts, &labels, &centroids, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < cfg.kmeans_tol {
            converged = true;
            break;
        }
    }
    // Final labels are nearest to the final centroids.
    let wcss = assign(&pts, &centroids, &mut labels);
    push_wcss(&mut wcss_history, wcss);

    // Drop empty clusters, keeping centroid order.
    let mut remap = vec![usize::MAX; k];
    let mut kept = Vec::new();
    for (c, centroid) in centroids.into_iter().enumerate() {
        if labels.contains(&c) {
            remap[c] = kept.len();
            kept.push(centroid);
        }
    }
    let labels: Vec<usize> = labels.iter().map(|&l| remap[l]).collect();

    Ok(KMeansFit {
        assignment: ClusterAssignment {
            labels,
            k: kept.len(),
            method: ClusterMethod::KMeans,
            seed: cfg.seed,
        },
        centroids: kept,
        wcss_history,
        iterations,
        converged,
    })
}

fn push_wcss(history: &mut Vec<f64>, wcss: f64) {
    if let Some(&prev) = history.last() {
        debug_assert!(
            wcss <= prev + 1e-12 * prev.abs().max(1.0),
            "WCSS increased from {prev} to {wcss}"
        );
    }
    history.push(wcss);
}

/// k-means++: first centre uniform, the rest sampled proportionally to the
/// squared distance to the nearest chosen centre. When every remaining
/// weight is zero the lowest unchosen index is taken.
fn plus_plus_init(pts: &[&[f64]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut rng = seed::rng(seed);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![pts[first].to_vec()];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, pts[first])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.push(pts[pick].to_vec());
        for (w, p) in d2.iter_mut().zip(pts) {
            *w = w.min(sq_dist(p, pts[pick]));
        }
    }
    centroids
}

/// Nearest-centroid assignment, ties to the lowest centroid index. Returns
/// the WCSS of the new labelling.
fn assign(pts: &[&[f64]], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut wcss = 0.0;
    for (label, p) in labels.iter_mut().zip(pts) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        *label = best;
        wcss += best_d;
    }
    wcss
}

/// Member means, summed in point order. Empty clusters keep their centroid.
fn update_centroids(
    pts: &[&[f64]],
    labels: &[usize],
    old: &[Vec<f64>],
    dim: usize,
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; old.len()];
    let mut counts = vec![0usize; old.len()];
    for (p, &l) in pts.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(old)
        .map(|((sum, count), prev)| {
            if count == 0 {
                prev.clone()
            } else {
                sum.into_iter().map(|s| s / count as f64).collect()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> ClusterConfig {
        ClusterConfig {
            seed,
            ..ClusterConfig::default()
        }
    }

    /// Brute-force minimum WCSS over all labelings into at most `k` groups.
    fn brute_force_min_wcss(pts: &[Vec<f64>], k: usize) -> f64 {
        let n = pts.len();
        let mut best = f64::INFINITY;
        let total = k.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let labels: Vec<usize> = (0..n)
                .map(|_| {
                    let l = c % k;
                    c /= k;
                    l
                })
                .collect();
            let mut w = 0.0;
            for g in 0..k {
                let members: Vec<&Vec<f64>> = pts
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == g)
                    .map(|(p, _)| p)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let d = members[0].len();
                let mean: Vec<f64> = (0..d)
                    .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64)
                    .collect();
                w += members.iter().map(|m| sq_dist(m, &mean)).sum::<f64>();
            }
            best = best.min(w);
        }
        best
    }

    #[test]
    fn separated_pairs_are_partitioned() {
        let pts = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        for seed in 0..20 {
            let fit = kmeans_fit(&pts, 2, &cfg(seed)).unwrap();
            let l = &fit.assignment.labels;
            assert_eq!(l[0], l[1]);
            assert_eq!(l[2], l[3]);
            assert_ne!(l[0], l[2]);
            assert!((fit.wcss() - brute_force_min_wcss(&pts, 2)).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let a = kmeans(&pts, 3, &cfg(1)).unwrap();
        assert_eq!(a.k, 3);
        let mut sorted = a.labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn identical_points_compact_to_one_cluster() {
        let pts = vec![vec![0.6, 0.8]; 5];
        let a = kmeans(&pts, 2, &cfg(3)).unwrap();
        assert_eq!(a.k, 1);
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn one_hot_four_points_reach_optimal_wcss() {
        let pts: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let optimum = brute_force_min_wcss(&pts, 2);
        for seed in 0..10 {
            let fit = kmeans_fit(&pts, 2, &cfg(seed)).unwrap();
            assert_eq!(fit.assignment.k, 2);
            assert!(
                (fit.wcss() - optimum).abs() < 1e-12,
                "seed {seed}: {} vs {optimum}",
                fit.wcss()
            );
        }
    }

    #[test]
    fn errors() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(
            kmeans(&pts, 3, &cfg(0)),
            Err(ClusterError::InvalidK { k: 3, n: 2 })
        );
        assert_eq!(
            kmeans(&pts, 0, &cfg(0)),
            Err(ClusterError::InvalidK { k: 0, n: 2 })
        );
        let ragged = vec![vec![1.0, 0.0], vec![0.0]];
        assert!(matches!(
            kmeans(&ragged, 1, &cfg(0)),
            Err(ClusterError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn labels_are_nearest_centroid_at_convergence() {
        let mut rng = seed::rng(11);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let fit = kmeans_fit(&pts, 5, &cfg(2)).unwrap();
        for (p, &l) in pts.iter().zip(&fit.assignment.labels) {
            let nearest = fit
                .centroids
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (c, ctr)| {
                    let d = sq_dist(p, ctr);
                    if d < acc.1 {
                        (c, d)
                    } else {
                        acc
                    }
                })
                .0;
            assert_eq!(l, nearest);
        }
        assert!(fit.wcss_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
