//! Temporary tuning probe for the active-learning advantage setup. Not part
//! of the crate's public examples; deleted before release.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samla::acquisition::{meta_train, AcquisitionParams, MetaConfig};
use samla::engine::{AircraftDistribution, PolicyChoice, Task, TaskDistribution};
use samla::ensemble::EnsembleConfig;
use samla::envs::{default_safety_spec, AircraftConfig};
use samla::policy::PolicyConfig;
use samla::seed::derive_seed;
use samla::tensor::Tensor;

fn median(xs: &mut Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn run_one(
    dist: &TaskDistribution,
    acq: &AcquisitionParams,
    policy: PolicyChoice,
    pcfg: &PolicyConfig,
    seed: u64,
    m: usize,
) -> (f64, f64, f64) {
    let mut task = dist.sample(seed).expect("samplable");
    task.initialize().expect("warm");
    let e0 = task.model_error().expect("error");
    let mut errors = vec![e0];
    let mut side = 0usize;
    for _ in 0..m {
        let j = task.action_dim();
        let plan = match policy {
            PolicyChoice::Ours => task.select_plan(acq, pcfg).expect("solvable").0,
            other => task.select_baseline(other, seed).expect("selectable").0,
        };
        let action = Tensor::from_vec(vec![j], plan.data()[..j].to_vec()).unwrap();
        let flags = task.execute(&action).expect("in box");
        if flags.side_effect {
            side += 1;
        }
        errors.push(task.model_error().expect("error"));
    }
    let gains: Vec<f64> = errors.iter().map(|e| 1.0 - e / e0).collect();
    let cum = *gains.last().unwrap();
    let mut auc = 0.0;
    for k in 1..gains.len() {
        auc += 0.5 * (gains[k - 1] + gains[k]);
    }
    (cum, auc, side as f64 / m as f64)
}

fn eval_policy(
    dist: &TaskDistribution,
    acq_for_seed: &dyn Fn(u64) -> AcquisitionParams,
    policy: PolicyChoice,
    pcfg: &PolicyConfig,
    seeds: u64,
    m: usize,
    label: &str,
) {
    let start = std::time::Instant::now();
    let mut cums = Vec::new();
    let mut aucs = Vec::new();
    let mut sides = Vec::new();
    for i in 0..seeds {
        let seed = 1000 + i;
        let acq = acq_for_seed(seed);
        let (c, a, s) = run_one(dist, &acq, policy, pcfg, seed, m);
        cums.push(c);
        aucs.push(a);
        sides.push(s);
    }
    println!(
        "{:<16} median cum gain {:.4}  median auc {:.4}  mean side {:.3}  ({:.1}s)",
        label,
        median(&mut cums),
        median(&mut aucs),
        sides.iter().sum::<f64>() / seeds as f64,
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_meta: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let seeds: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let d: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4);
    let j: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2);
    let m: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(12);
    let t: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(2);
    let warm: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(8);
    let b_lo: f64 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0.25);
    let meta_nodes: u64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let meta_steps: usize = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(6);
    let radius: f64 = args.get(11).map(|s| s.parse().unwrap()).unwrap_or(1.0);

    let cfg = AircraftConfig {
        state_dim: d,
        action_dim: j,
        action_limit: 1.0,
        b_scale_lo: b_lo,
        ..AircraftConfig::default()
    };
    let mut spec = default_safety_spec(d, j, 1.0);
    spec.horizon = t;
    for dim in 0..d {
        spec.radius.set(dim, radius);
    }
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
        warm_scale: 1.0,
        fixed_seed: None,
    });
    let pcfg = PolicyConfig::new(1.0, 100.0);

    let random_acq = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xACC0);
        AcquisitionParams::init(d, j, t, 6, 4, (8, 8), &mut rng)
    };

    for policy in [PolicyChoice::Random, PolicyChoice::Diversity, PolicyChoice::Epistemic] {
        eval_policy(&dist, &random_acq, policy, &pcfg, seeds, m, policy.name());
    }
    eval_policy(&dist, &random_acq, PolicyChoice::Ours, &pcfg, seeds, m, "ours-untrained");

    if n_meta > 0 {
        let mcfg = MetaConfig {
            episodes: n_meta,
            steps: meta_steps,
            node_limit: meta_nodes,
            lstm_hidden: 6,
            z_dim: 4,
            q_hidden: (8, 8),
            ..MetaConfig::default()
        };
        let start = std::time::Instant::now();
        let report = meta_train(&dist, &mcfg, 7).expect("meta train");
        let tail = 20.min(report.episode_rewards.len());
        let tail_mean: f64 =
            report.episode_rewards[report.episode_rewards.len() - tail..].iter().sum::<f64>()
                / tail as f64;
        println!(
            "meta-train {} episodes in {:.1}s ({:.2}s/ep), skipped {}, tail-{} reward {:.4}",
            n_meta,
            start.elapsed().as_secs_f64(),
            start.elapsed().as_secs_f64() / n_meta as f64,
            report.skipped_episodes,
            tail,
            tail_mean
        );
        let trained = report.params;
        let _ = derive_seed(0, 0);
        eval_policy(&dist, &|_| trained.clone(), PolicyChoice::Ours, &pcfg, seeds, m, "ours-trained");
    }
}
