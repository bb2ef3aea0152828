//! Meta-trains the acquisition on a stream of dose-response subjects and
//! prints the learning curve: per-episode reward and TD loss.
//!
//!     cargo run --example meta_train_toy

use samla::acquisition::{meta_train, MetaConfig};
use samla::engine::{AdmetsDistribution, TaskDistribution};

fn main() {
    let dist = TaskDistribution::Admets(AdmetsDistribution {
        epsilon: 0.1,
        warm_observations: 2,
        fixed_seed: None,
    });
    let cfg = MetaConfig {
        episodes: 60,
        steps: 4,
        batch_size: 8,
        buffer_capacity: 512,
        target_candidates: 16,
        lr: 3e-3,
        lstm_hidden: 4,
        z_dim: 3,
        q_hidden: (8, 8),
        ..MetaConfig::default()
    };

    let report = meta_train(&dist, &cfg, 1).expect("trainable");
    println!(
        "{} episodes, {} skipped, replay holds {} transitions, {} updates\n",
        report.episode_rewards.len(),
        report.skipped_episodes,
        report.replay_len,
        report.losses.len()
    );

    println!("episode block   mean step reward");
    for (i, block) in report.episode_rewards.chunks(10).enumerate() {
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        println!("{:>3} .. {:>3}      {:+.4}", i * 10, i * 10 + block.len() - 1, mean);
    }

    if !report.losses.is_empty() {
        println!("\nupdate block    mean td loss");
        for (i, block) in report.losses.chunks(40).enumerate() {
            let mean = block.iter().sum::<f64>() / block.len() as f64;
            println!("{:>4} .. {:>4}    {:.5}", i * 40, i * 40 + block.len() - 1, mean);
        }
    }
}
