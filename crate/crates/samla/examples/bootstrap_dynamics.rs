//! Trains a bootstrap ensemble on transitions from a damaged aircraft and
//! reports the held-out error plus the parameter spread the chance
//! constraints later consume.
//!
//!     cargo run --example bootstrap_dynamics

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samla::ensemble::{linearize, train_ensemble, EnsembleConfig, TransitionSample};
use samla::envs::{aircraft_step, sample_damage, AircraftConfig};
use samla::seed::derive_seed;
use samla::tensor::Tensor;

fn main() {
    let cfg = AircraftConfig { state_dim: 4, action_dim: 2, ..AircraftConfig::default() };
    let truth = sample_damage(42, &cfg).expect("valid config");

    // Random rollout from trim.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut x = Tensor::zeros(vec![cfg.state_dim]);
    let mut data = Vec::new();
    for k in 0..40 {
        let u = Tensor::from_vec(
            vec![cfg.action_dim],
            (0..cfg.action_dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let next = aircraft_step(&truth, &x, &u, derive_seed(9, k)).expect("in box");
        data.push(TransitionSample::new(x.clone(), u.clone(), next.clone()));
        x = next;
    }

    let ens_cfg = EnsembleConfig { members: 5, hidden: vec![16], epochs: 250, ..EnsembleConfig::default() };
    let ens = train_ensemble(&data, &ens_cfg, 3).expect("enough samples");
    println!("trained {} members on {} transitions", ens.members.len(), data.len());
    println!("held-out mse {:.6}", ens.heldout_mse().expect("eval split"));

    // Linearize at trim with zero action: sigma_* feed Phi^{-1}(1-eps)
    // tightening in the policy.
    let lin = linearize(&ens, &Tensor::zeros(vec![cfg.state_dim]), &Tensor::zeros(vec![cfg.action_dim]))
        .expect("linearizable");
    println!("\nmean dynamics row 0 (A): {:?}", &lin.a_bar.data()[..cfg.state_dim]);
    let spread_a: f64 =
        lin.sigma_state.data().iter().sum::<f64>() / lin.sigma_state.len() as f64;
    let spread_b: f64 =
        lin.sigma_action.data().iter().sum::<f64>() / lin.sigma_action.len() as f64;
    println!("mean bootstrap spread: state jacobian {:.4}, action jacobian {:.4}", spread_a, spread_b);
    println!("(spread shrinks as the rollout grows; rerun with more steps to see it)");
}
