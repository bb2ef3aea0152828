//! Temporary tuning probe for the safety-rate setup. Not part of the crate's
//! public examples; deleted before release.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samla::acquisition::AcquisitionParams;
use samla::engine::{AircraftDistribution, TaskDistribution};
use samla::ensemble::EnsembleConfig;
use samla::envs::{default_safety_spec, AircraftConfig};
use samla::policy::PolicyConfig;
use samla::tensor::Tensor;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda1: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let seeds: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let d: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4);
    let j: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2);
    let m: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(12);
    let limit: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let warm_scale: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let t: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(2);
    let warm: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(6);
    let b_lo: f64 = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(0.0);

    let cfg = AircraftConfig {
        state_dim: d,
        action_dim: j,
        action_limit: limit,
        b_scale_lo: b_lo,
        ..AircraftConfig::default()
    };
    let mut spec = default_safety_spec(d, j, limit);
    spec.horizon = t;
    let dist = TaskDistribution::Aircraft(AircraftDistribution {
        cfg,
        spec,
        ens_cfg: EnsembleConfig {
            members: 5,
            hidden: vec![24],
            epochs: 300,
            warm_epochs: 60,
            min_samples: 2,
            ..EnsembleConfig::default()
        },
        warm_actions: warm,
        warm_scale,
        fixed_seed: None,
    });
    let pcfg = PolicyConfig::new(lambda1, 100.0);

    let start = std::time::Instant::now();
    let mut closed = 0usize;
    let mut safe = 0usize;
    let mut miss_log: Vec<String> = Vec::new();
    let mut nodes_total = 0u64;
    let mut solves = 0u64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xACC0);
        let acq = AcquisitionParams::init(d, j, dist.plan_steps(), 6, 4, (8, 8), &mut rng);
        let mut task = dist.sample(seed).expect("samplable");
        task.initialize().expect("warm");
        for step in 1..=m {
            let (plan, diag) = task.select_plan(&acq, &pcfg).expect("solvable");
            let action = Tensor::from_vec(vec![j], plan.data()[..j].to_vec()).unwrap();
            let flags = task.execute(&action).expect("in box");
            nodes_total += diag.nodes;
            solves += 1;
            if flags.batch_end {
                closed += 1;
                if flags.safe {
                    safe += 1;
                } else {
                    let e = task.model_error().unwrap_or(f64::NAN);
                    let xmax = task
                        .state()
                        .data()
                        .iter()
                        .fold(0.0f64, |a, &b| a.max(b.abs()));
                    miss_log.push(format!(
                        "seed {} step {}: slack {:.3e} err {:.4} |x|inf {:.3}",
                        seed,
                        step,
                        diag.slack_total.unwrap_or(f64::NAN),
                        e,
                        xmax
                    ));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    println!(
        "lambda1 {} D{} J{} M{} limit {}: {}/{} batch-end safe = {:.1}%",
        lambda1,
        d,
        j,
        m,
        limit,
        safe,
        closed,
        100.0 * safe as f64 / closed as f64
    );
    println!(
        "{} seeds in {:.1}s ({:.2}s/seed), mean nodes/solve {:.0}",
        seeds,
        secs,
        secs / seeds as f64,
        nodes_total as f64 / solves as f64
    );
    for line in miss_log.iter().take(12) {
        println!("  miss {}", line);
    }
}
