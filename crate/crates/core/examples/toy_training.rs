//! Trains a tabular step-type policy with group-normalized REINFORCE
//! against the Structure Reward, and prints the learning curve.
//!
//! ```text
//! cargo run -p sarl-core --release --example toy_training
//! ```

use sarl_core::trainer::{train, RewardMode, TrainConfig};

fn main() {
    for (name, mode) in [
        ("labels", RewardMode::LabelsDirect),
        (
            "pipeline, noise 0.05",
            RewardMode::FullPipeline { noise: 0.05 },
        ),
    ] {
        let cfg = TrainConfig {
            mode,
            ..Default::default()
        };
        let log = train(&cfg).expect("training");
        println!("{name}:");
        for row in log
            .iterations
            .iter()
            .step_by(50)
            .chain(log.iterations.last())
        {
            println!(
                "  iter {:>3}  mean SR {:.3}  entropy {:.3}  max logit {:.2}",
                row.iteration, row.mean_sr, row.entropy, row.max_logit
            );
        }
        println!(
            "  improvement (last 20 vs first 20): {:+.3}",
            log.improvement(20)
        );
        let walk = log.policy.rollout_seeded(0);
        println!("  sample walk after training: {walk:?}");
    }
}
