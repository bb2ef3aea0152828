//! Globally maximizes a small random ReLU network over a box by encoding it
//! as a mixed-integer program, then cross-checks the optimum on a dense grid.
//!
//!     cargo run --example milp_relu_max

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samla::milp::{bb_solve, encode_q_network, LinExpr, MilpModel};
use samla::nn::{mlp_forward, Activation, MlpParams};
use samla::tensor::Tensor;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Two inputs feed the network directly; z is empty so the encoder sees
    // a pure input-to-scalar ReLU net.
    let net = MlpParams::init(&[2, 6, 5, 1], &[Activation::Relu, Activation::Relu, Activation::Identity], &mut rng);
    let z = Tensor::zeros(vec![0]);
    let boxes = [(-1.0, 1.0), (-1.0, 1.0)];

    let mut model = MilpModel::new();
    let u: Vec<usize> = boxes.iter().map(|&(lo, hi)| model.add_var(lo, hi)).collect();
    let out = encode_q_network(&mut model, &net, &z, &u).expect("bounded encode");
    model.set_objective(LinExpr::single(out, 1.0));

    let sol = bb_solve(&model).expect("solvable");
    let u_star: Vec<f64> = u.iter().map(|&v| sol.values[v]).collect();
    println!("milp optimum  {:+.6} at u = [{:+.4}, {:+.4}]", sol.objective, u_star[0], u_star[1]);
    println!("nodes expanded {}", sol.nodes);

    // Dense grid oracle. The MILP value must match the best grid value up to
    // the grid resolution.
    let forward = |a: f64, b: f64| -> f64 {
        let x = Tensor::from_vec(vec![2], vec![a, b]).unwrap();
        mlp_forward(&net, &x).expect("forward").0.get(0)
    };
    let n = 400;
    let mut best = f64::NEG_INFINITY;
    let mut arg = (0.0, 0.0);
    for i in 0..=n {
        for j in 0..=n {
            let a = -1.0 + 2.0 * i as f64 / n as f64;
            let b = -1.0 + 2.0 * j as f64 / n as f64;
            let v = forward(a, b);
            if v > best {
                best = v;
                arg = (a, b);
            }
        }
    }
    println!("grid optimum  {:+.6} at u = [{:+.4}, {:+.4}]", best, arg.0, arg.1);
    println!("gap           {:+.2e} (grid is a lower bound)", sol.objective - best);
    assert!(sol.objective >= best - 1e-9, "MILP must dominate every grid point");
    assert!((sol.objective - forward(u_star[0], u_star[1])).abs() < 1e-6, "encoding is exact");
    println!("encoded value equals the network forward pass at the argmax");
}
