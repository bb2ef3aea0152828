//! Runs one test-time identification episode on a damaged aircraft with the
//! learned-acquisition policy and prints the per-step trace.
//!
//!     cargo run --example aircraft_episode

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samla::acquisition::AcquisitionParams;
use samla::engine::{AircraftDistribution, TaskDistribution};
use samla::ensemble::EnsembleConfig;
use samla::envs::{default_safety_spec, AircraftConfig};
use samla::policy::PolicyConfig;
use samla::tensor::Tensor;

fn main() {
    let cfg = AircraftConfig { state_dim: 3, action_dim: 2, ..AircraftConfig::default() };
    let spec = default_safety_spec(cfg.state_dim, cfg.action_dim, cfg.action_limit);
    let dist = TaskDistribution::Aircraft(AircraftDistribution {
        cfg: cfg.clone(),
        spec,
        ens_cfg: EnsembleConfig {
            members: 3,
            hidden: vec![12],
            epochs: 120,
            warm_epochs: 30,
            min_samples: 2,
            ..EnsembleConfig::default()
        },
        warm_actions: 5,
        warm_scale: 1.0,
        fixed_seed: None,
    });

    // An untrained acquisition still identifies: the chance constraints keep
    // the probing inside the sphere while the model error falls.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let acq =
        AcquisitionParams::init(cfg.state_dim, cfg.action_dim, dist.plan_steps(), 6, 4, (8, 8), &mut rng);
    let pcfg = PolicyConfig::new(1.0, 100.0);

    let mut task = dist.sample(17).expect("samplable");
    task.initialize().expect("warm start");
    let mut e_prev = task.model_error().expect("eval split");
    println!("model error after warm start: {:.5}\n", e_prev);
    println!("step  action            error     gain    safe  batch");

    for step in 1..=8 {
        let (plan, diag) = task.select_plan(&acq, &pcfg).expect("feasible");
        let action =
            Tensor::from_vec(vec![cfg.action_dim], plan.data()[..cfg.action_dim].to_vec()).unwrap();
        let flags = task.execute(&action).expect("in box");
        let e = task.model_error().expect("eval split");
        println!(
            "{:>4}  [{:+.3}, {:+.3}]  {:.5}  {:+.3}  {:>5}  {}",
            step,
            action.get(0),
            action.get(1),
            e,
            (e_prev - e) / e_prev.max(1e-12),
            flags.safe,
            if flags.batch_end { "end" } else { "   " },
        );
        let _ = diag;
        e_prev = e;
    }
    println!("\nfinal state {:?}", task.state().data());
}
