//! Groups step embeddings into latent reasoning types with KMeans and
//! HDBSCAN, and shows the resulting maps.
//!
//! ```text
//! cargo run -p sarl-core --example clustering
//! ```

use sarl_core::cluster::{cluster_trace, hdbscan_fit, kmeans_fit};
use sarl_core::embed::embed_steps;
use sarl_core::{
    structure_reward, ClusterConfig, ClusterMethod, HashingEncoder, NoisePolicy, ReasoningMap,
};

fn main() {
    let steps: Vec<String> = [
        "Compute the derivative of f",
        "Compute the derivative of g",
        "Set the derivative equal to zero",
        "Compute the derivative of h",
        "Set the derivative equal to zero again",
        "Verify the critical point numerically",
        "Verify the critical point numerically once more",
        "Compute the derivative of f",
        "Wait, reconsider the domain restrictions",
    ]
    .map(String::from)
    .to_vec();
    let embeddings = embed_steps(&steps, &HashingEncoder::new(128)).expect("embed");

    let km = kmeans_fit(
        &embeddings
            .iter()
            .map(|e| e.vector.as_slice())
            .collect::<Vec<_>>(),
        sarl_core::cluster::choose_k(steps.len()).unwrap(),
        &ClusterConfig::default(),
    )
    .unwrap();
    println!(
        "kmeans   labels {:?}  wcss {:?}",
        km.assignment.labels, km.wcss_history
    );

    let points: Vec<&[f64]> = embeddings.iter().map(|e| e.vector.as_slice()).collect();
    let hd = hdbscan_fit(&points, &ClusterConfig::with_method(ClusterMethod::Hdbscan)).unwrap();
    println!(
        "hdbscan  labels {:?}  params {:?}  noise {}",
        hd.assignment.labels,
        hd.params,
        hd.noise_count()
    );

    for (name, cfg) in [
        ("kmeans", ClusterConfig::default()),
        (
            "hdbscan/merged",
            ClusterConfig::with_method(ClusterMethod::Hdbscan),
        ),
        (
            "hdbscan/singletons",
            ClusterConfig {
                noise_policy: NoisePolicy::Singletons,
                ..ClusterConfig::with_method(ClusterMethod::Hdbscan)
            },
        ),
    ] {
        let a = cluster_trace(&embeddings, &cfg).unwrap();
        let map = ReasoningMap::from_assignment(&a);
        println!(
            "{name:<20} K={} edges={} SR={:.4}",
            a.k,
            map.num_edges(),
            structure_reward(&map).sr
        );
    }
}
