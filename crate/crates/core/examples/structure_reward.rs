//! Builds reasoning maps from step-type sequences and scores them.
//!
//! ```text
//! cargo run -p sarl-core --example structure_reward
//! ```

use sarl_core::graph::structure_reward_with;
use sarl_core::{structure_reward, ReasoningMap};

fn main() {
    let walks: [(&str, &[usize]); 5] = [
        ("loop back to the start", &[0, 1, 2, 0]),
        ("straight line", &[0, 1, 2]),
        ("hub and spokes", &[0, 1, 0, 2, 0, 3]),
        ("dense revisits", &[0, 1, 2, 3, 0, 2, 1, 3]),
        ("one idea only", &[0, 0, 0]),
    ];
    println!(
        "{:<24} {:>3} {:>3} {:>7} {:>7} {:>7}",
        "walk", "K", "|E|", "C", "L", "SR"
    );
    for (name, labels) in walks {
        let k = labels.iter().max().unwrap() + 1;
        let map = ReasoningMap::from_labels(k, labels);
        let s = structure_reward(&map);
        let l = s.l.map_or("-".to_owned(), |l| format!("{l:.3}"));
        println!(
            "{name:<24} {k:>3} {:>3} {:>7.3} {l:>7} {:>7.3}",
            map.num_edges(),
            s.c,
            s.sr
        );
    }

    // Degenerate maps get a configurable score.
    let flat = ReasoningMap::from_labels(1, &[0, 0]);
    println!(
        "degenerate with reward 0.25: {}",
        structure_reward_with(&flat, 0.25).sr
    );

    println!(
        "\n{}",
        ReasoningMap::from_labels(4, &[0, 1, 2, 0, 3]).to_dot("example")
    );
}
