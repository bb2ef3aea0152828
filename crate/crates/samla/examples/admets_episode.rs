//! Dose-response identification with side-effect safety: the agent reads a
//! scalar assay at chosen amplitudes and must locate the response optimum
//! without triggering negative responses.
//!
//!     cargo run --example admets_episode

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samla::acquisition::AcquisitionParams;
use samla::engine::{AdmetsDistribution, PolicyChoice, TaskDistribution};
use samla::policy::PolicyConfig;
use samla::tensor::Tensor;

fn run(policy: Option<PolicyChoice>, seed: u64) -> (f64, usize) {
    let dist = TaskDistribution::Admets(AdmetsDistribution {
        epsilon: 0.1,
        warm_observations: 2,
        fixed_seed: None,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let acq = AcquisitionParams::init(1, 1, 1, 4, 3, (6, 6), &mut rng);
    let pcfg = PolicyConfig::new(1.0, 100.0);

    let mut task = dist.sample(seed).expect("samplable");
    task.initialize().expect("warm reads");
    let mut side_effects = 0;
    for _ in 1..=12 {
        let (plan, _diag) = match policy {
            None => task.select_plan(&acq, &pcfg).expect("selectable"),
            Some(p) => task.select_baseline(p, seed).expect("selectable"),
        };
        let action = Tensor::from_vec(vec![1], vec![plan.get(0)]).unwrap();
        let flags = task.execute(&action).expect("amplitude in range");
        if flags.side_effect {
            side_effects += 1;
        }
    }
    (task.model_error().expect("estimate"), side_effects)
}

fn main() {
    println!("policy      optimum error   side effects (of 12 queries)");
    let mut ours = Vec::new();
    let mut bo = Vec::new();
    for seed in 0..5 {
        ours.push(run(None, seed));
        bo.push(run(Some(PolicyChoice::Bo), seed));
    }
    let fmt = |name: &str, rows: &[(f64, usize)]| {
        let err = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
        let side = rows.iter().map(|r| r.1).sum::<usize>();
        println!("{:<10}  {:>13.4}   {:>3} total over {} subjects", name, err, side, rows.len());
    };
    fmt("ours", &ours);
    fmt("bo", &bo);
    println!("\n(optimum error is the normalized distance between the estimated and");
    println!(" true best amplitude; a side effect is a negative true response)");
}
