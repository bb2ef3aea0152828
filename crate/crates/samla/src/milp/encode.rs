//! Exact mixed-integer encodings of ReLU networks and absolute values,
//! with interval bound propagation supplying the per-neuron big-M constants.

use super::{LinExpr, MilpError, MilpModel, Sense};
use crate::nn::{Activation, MlpParams};
use crate::tensor::Tensor;

/// Per-layer pre- and post-activation interval bounds.
#[derive(Debug, Clone)]
pub struct NetBounds {
    /// `pre[l][r]` bounds the pre-activation of neuron `r` in layer `l`.
    pub pre: Vec<Vec<(f64, f64)>>,
    /// Bounds after applying the layer activation.
    pub post: Vec<Vec<(f64, f64)>>,
}

/// Layer-by-layer interval arithmetic over `input_box`. Pre-activation
/// bounds come from weight sign splitting; ReLU clamps the post interval.
pub fn interval_bounds(net: &MlpParams, input_box: &[(f64, f64)]) -> NetBounds {
    assert_eq!(input_box.len(), net.in_dim(), "input box must match network input");
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut post = Vec::with_capacity(net.layers.len());
    let mut inputs: Vec<(f64, f64)> = input_box.to_vec();
    for layer in &net.layers {
        let mut layer_pre = Vec::with_capacity(layer.out_dim());
        let mut layer_post = Vec::with_capacity(layer.out_dim());
        for r in 0..layer.out_dim() {
            let mut lo = layer.bias.get(r);
            let mut hi = lo;
            for c in 0..layer.in_dim() {
                let w = layer.weight.get2(r, c);
                let (ilo, ihi) = inputs[c];
                if w >= 0.0 {
                    lo += w * ilo;
                    hi += w * ihi;
                } else {
                    lo += w * ihi;
                    hi += w * ilo;
                }
            }
            layer_pre.push((lo, hi));
            layer_post.push(match layer.activation {
                Activation::Relu => (lo.max(0.0), hi.max(0.0)),
                Activation::Identity => (lo, hi),
            });
        }
        inputs = layer_post.clone();
        pre.push(layer_pre);
        post.push(layer_post);
    }
    NetBounds { pre, post }
}

/// Adds `out = max(0, pre)` to the model, given valid bounds `lo <= pre <= hi`.
///
/// Sign-definite cases need no binary; otherwise the standard big-M
/// formulation with one indicator is used, exact because the bounds are.
pub fn encode_relu(model: &mut MilpModel, pre: &LinExpr, lo: f64, hi: f64) -> Result<usize, MilpError> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(MilpError::InfiniteBound { what: "encode_relu" });
    }
    assert!(lo <= hi, "encode_relu requires lo <= hi");

    if hi <= 0.0 {
        return Ok(model.add_var(0.0, 0.0));
    }
    if lo >= 0.0 {
        let out = model.add_var(lo, hi);
        let mut eq = LinExpr::single(out, 1.0);
        eq.add_scaled(pre, -1.0);
        model.add_constraint(eq, Sense::Eq, 0.0);
        return Ok(out);
    }

    let out = model.add_var(0.0, hi);
    let delta = model.add_binary();
    // out >= pre
    let mut ge = LinExpr::single(out, 1.0);
    ge.add_scaled(pre, -1.0);
    model.add_constraint(ge, Sense::Ge, 0.0);
    // out <= pre - lo(1 - delta)
    let mut ub1 = LinExpr::single(out, 1.0);
    ub1.add_scaled(pre, -1.0);
    ub1.add_term(delta, -lo);
    model.add_constraint(ub1, Sense::Le, -lo);
    // out <= hi * delta
    let mut ub2 = LinExpr::single(out, 1.0);
    ub2.add_term(delta, -hi);
    model.add_constraint(ub2, Sense::Le, 0.0);
    Ok(out)
}

/// Adds `abs = |expr|` as `relu(expr) + relu(-expr)`, sharing the bound
/// information between the two halves.
pub fn encode_abs(model: &mut MilpModel, expr: &LinExpr, lo: f64, hi: f64) -> Result<usize, MilpError> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(MilpError::InfiniteBound { what: "encode_abs" });
    }
    let pos = encode_relu(model, expr, lo, hi)?;
    let neg = encode_relu(model, &expr.scaled(-1.0), -hi, -lo)?;
    let abs_lo = if lo > 0.0 { lo } else if hi < 0.0 { -hi } else { 0.0 };
    let abs_hi = lo.abs().max(hi.abs());
    let out = model.add_var(abs_lo, abs_hi);
    let mut eq = LinExpr::single(out, 1.0);
    eq.add_term(pos, -1.0);
    eq.add_term(neg, -1.0);
    model.add_constraint(eq, Sense::Eq, 0.0);
    Ok(out)
}

/// Bound magnitudes past this point make big-M relaxations useless.
const MAX_ENCODE_BOUND: f64 = 1e6;

/// Encodes `q_head(concat(U, z))` over the model variables `u_vars`, with
/// the constant embedding `z` folded into the first-layer bias. Returns the
/// variable holding the scalar network output.
///
/// The box for bound propagation is read from the `u_vars` bounds, which
/// must be finite.
pub fn encode_q_network(
    model: &mut MilpModel,
    q_head: &MlpParams,
    z: &Tensor,
    u_vars: &[usize],
) -> Result<usize, MilpError> {
    if q_head.layers.is_empty() {
        return Err(MilpError::BadModel("q network has no layers".into()));
    }
    if q_head.in_dim() != u_vars.len() + z.len() {
        return Err(MilpError::BadModel(format!(
            "q network expects input dim {}, got {} action vars + {} embedding dims",
            q_head.in_dim(),
            u_vars.len(),
            z.len()
        )));
    }
    if q_head.out_dim() != 1 {
        return Err(MilpError::BadModel("q network must have scalar output".into()));
    }

    let mut input_box = Vec::with_capacity(u_vars.len());
    for &u in u_vars {
        let v = model.var(u);
        if !v.lower.is_finite() || !v.upper.is_finite() {
            return Err(MilpError::InfiniteBound { what: "encode_q_network" });
        }
        input_box.push((v.lower, v.upper));
    }

    // Fold the constant z into the first layer: keep only the U columns and
    // absorb W_z z into the bias.
    let nu = u_vars.len();
    let mut folded = q_head.clone();
    {
        let first = &mut folded.layers[0];
        let out_dim = first.out_dim();
        let mut w_u = Tensor::zeros(vec![out_dim, nu]);
        let mut bias = first.bias.clone();
        for r in 0..out_dim {
            for c in 0..nu {
                w_u.set2(r, c, first.weight.get2(r, c));
            }
            let mut acc = 0.0;
            for (k, &zv) in z.data().iter().enumerate() {
                acc += first.weight.get2(r, nu + k) * zv;
            }
            bias.set(r, bias.get(r) + acc);
        }
        first.weight = w_u;
        first.bias = bias;
    }

    let bounds = interval_bounds(&folded, &input_box);
    for layer in &bounds.pre {
        for &(lo, hi) in layer {
            let mag = lo.abs().max(hi.abs());
            if mag > MAX_ENCODE_BOUND {
                return Err(MilpError::BoundTooLarge { bound: mag });
            }
        }
    }

    let mut inputs: Vec<usize> = u_vars.to_vec();
    let mut out_var = None;
    for (li, layer) in folded.layers.iter().enumerate() {
        let mut outs = Vec::with_capacity(layer.out_dim());
        for r in 0..layer.out_dim() {
            let mut pre = LinExpr::from_constant(layer.bias.get(r));
            for (c, &iv) in inputs.iter().enumerate() {
                pre.add_term(iv, layer.weight.get2(r, c));
            }
            let (lo, hi) = bounds.pre[li][r];
            let out = match layer.activation {
                Activation::Relu => encode_relu(model, &pre, lo, hi)?,
                Activation::Identity => {
                    let v = model.add_var(lo, hi);
                    let mut eq = LinExpr::single(v, 1.0);
                    eq.add_scaled(&pre, -1.0);
                    model.add_constraint(eq, Sense::Eq, 0.0);
                    v
                }
            };
            outs.push(out);
        }
        inputs = outs;
        out_var = inputs.last().copied();
    }
    Ok(out_var.expect("network has at least one layer"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{bb_solve, SolveStatus};
    use crate::nn::{mlp_forward, Layer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_layer_net(w: f64, b: f64) -> MlpParams {
        MlpParams::new(vec![Layer {
            weight: Tensor::matrix(1, 1, vec![w]).unwrap(),
            bias: Tensor::vector(vec![b]),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn interval_bounds_identity_passthrough() {
        let net = identity_layer_net(1.0, 0.0);
        let b = interval_bounds(&net, &[(-1.0, 1.0)]);
        assert_eq!(b.pre[0][0], (-1.0, 1.0));
        assert_eq!(b.post[0][0], (-1.0, 1.0));
    }

    #[test]
    fn interval_bounds_affine_unit() {
        let net = identity_layer_net(2.0, 1.0);
        let b = interval_bounds(&net, &[(0.0, 1.0)]);
        assert_eq!(b.pre[0][0], (1.0, 3.0));
        assert_eq!(b.post[0][0], (1.0, 3.0));
    }

    #[test]
    fn interval_bounds_contain_sampled_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = MlpParams::init(&[2, 6, 3], &[Activation::Relu, Activation::Identity], &mut rng);
        let bx = [(-2.0, 1.5), (0.0, 3.0)];
        let b = interval_bounds(&net, &bx);
        for _ in 0..10_000 {
            let x = Tensor::vector(vec![rng.gen_range(bx[0].0..=bx[0].1), rng.gen_range(bx[1].0..=bx[1].1)]);
            let (out, cache) = mlp_forward(&net, &x).unwrap();
            for (li, pres) in cache.pres.iter().enumerate() {
                for r in 0..pres.len() {
                    let (lo, hi) = b.pre[li][r];
                    assert!(pres.get(r) >= lo - 1e-9 && pres.get(r) <= hi + 1e-9);
                }
            }
            for r in 0..out.len() {
                let (lo, hi) = b.post[1][r];
                assert!(out.get(r) >= lo - 1e-9 && out.get(r) <= hi + 1e-9);
            }
        }
    }

    /// Fixes `expr`'s single variable to `at`, encodes relu, and maximizes
    /// +out and -out to pin the implied value.
    fn relu_value_at(at: f64, lo: f64, hi: f64) -> f64 {
        let check = |sign: f64| -> f64 {
            let mut m = MilpModel::new();
            let x = m.add_var(lo, hi);
            m.add_constraint(LinExpr::single(x, 1.0), Sense::Eq, at);
            let out = encode_relu(&mut m, &LinExpr::single(x, 1.0), lo, hi).unwrap();
            m.set_objective(LinExpr::single(out, sign));
            let s = bb_solve(&m).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal);
            s.values[out]
        };
        let up = check(1.0);
        let down = check(-1.0);
        assert!((up - down).abs() < 1e-8, "relu output not pinned: {} vs {}", up, down);
        up
    }

    #[test]
    fn relu_of_fixed_negative_is_zero() {
        assert!(relu_value_at(-0.5, -1.0, 1.0).abs() < 1e-8);
    }

    #[test]
    fn relu_of_fixed_positive_passes_through() {
        assert!((relu_value_at(0.5, -1.0, 1.0) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn relu_matches_direct_oracle_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let at = rng.gen_range(-2.0..2.0);
            let got = relu_value_at(at, -2.0, 2.0);
            assert!((got - at.max(0.0)).abs() < 1e-8, "relu({}) = {}", at, got);
        }
    }

    #[test]
    fn relu_exact_at_box_vertices() {
        for at in [-2.0, 2.0] {
            let got = relu_value_at(at, -2.0, 2.0);
            assert!((got - at.max(0.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn relu_rejects_infinite_bounds() {
        let mut m = MilpModel::new();
        let x = m.add_var(0.0, f64::INFINITY);
        let err = encode_relu(&mut m, &LinExpr::single(x, 1.0), 0.0, f64::INFINITY).unwrap_err();
        assert!(matches!(err, MilpError::InfiniteBound { .. }));
    }

    #[test]
    fn abs_of_fixed_values() {
        for (at, want) in [(-2.0, 2.0), (0.0, 0.0), (1.3, 1.3)] {
            let mut m = MilpModel::new();
            let x = m.add_var(-3.0, 3.0);
            m.add_constraint(LinExpr::single(x, 1.0), Sense::Eq, at);
            let a = encode_abs(&mut m, &LinExpr::single(x, 1.0), -3.0, 3.0).unwrap();
            m.set_objective(LinExpr::single(a, -1.0));
            let s = bb_solve(&m).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal);
            assert!((s.values[a] - want).abs() < 1e-7, "abs({}) = {}", at, s.values[a]);
        }
    }

    #[test]
    fn minimizing_abs_over_positive_interval_hits_lower_edge() {
        let mut m = MilpModel::new();
        let x = m.add_var(1.0, 3.0);
        let a = encode_abs(&mut m, &LinExpr::single(x, 1.0), 1.0, 3.0).unwrap();
        m.set_objective(LinExpr::single(a, -1.0));
        let s = bb_solve(&m).unwrap();
        assert!((s.objective + 1.0).abs() < 1e-7);
        assert!((s.values[x] - 1.0).abs() < 1e-6);
    }

    fn random_q_head(rng: &mut ChaCha8Rng, nu: usize, nz: usize) -> MlpParams {
        MlpParams::init(
            &[nu + nz, 5, 4, 1],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            rng,
        )
    }

    #[test]
    fn zero_weight_net_is_fixed_at_bias() {
        let mut net = random_q_head(&mut ChaCha8Rng::seed_from_u64(1), 2, 1);
        for layer in &mut net.layers {
            layer.weight.data_mut().fill(0.0);
            layer.bias.data_mut().fill(0.0);
        }
        net.layers[2].bias.set(0, 0.75);
        let mut m = MilpModel::new();
        let u: Vec<usize> = (0..2).map(|_| m.add_var(-1.0, 1.0)).collect();
        let q = encode_q_network(&mut m, &net, &Tensor::vector(vec![0.3]), &u).unwrap();
        m.set_objective(LinExpr::single(q, 1.0));
        let s = bb_solve(&m).unwrap();
        assert!((s.objective - 0.75).abs() < 1e-8);
    }

    #[test]
    fn encoded_value_matches_forward_at_fixed_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = random_q_head(&mut rng, 2, 3);
        let z = Tensor::uniform(vec![3], -1.0, 1.0, &mut rng);
        for _ in 0..10 {
            let u0 = rng.gen_range(-1.0..1.0);
            let u1 = rng.gen_range(-1.0..1.0);
            let mut m = MilpModel::new();
            let ua = m.add_var(-1.0, 1.0);
            let ub = m.add_var(-1.0, 1.0);
            m.add_constraint(LinExpr::single(ua, 1.0), Sense::Eq, u0);
            m.add_constraint(LinExpr::single(ub, 1.0), Sense::Eq, u1);
            let q = encode_q_network(&mut m, &net, &z, &[ua, ub]).unwrap();
            m.set_objective(LinExpr::single(q, 1.0));
            let s = bb_solve(&m).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal);
            let direct = mlp_forward(&net, &Tensor::vector(vec![u0, u1, z.get(0), z.get(1), z.get(2)]))
                .unwrap()
                .0
                .get(0);
            assert!((s.values[q] - direct).abs() < 1e-6, "{} vs {}", s.values[q], direct);
        }
    }

    #[test]
    fn maximization_matches_dense_grid_in_one_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let net = random_q_head(&mut rng, 1, 2);
        let z = Tensor::uniform(vec![2], -1.0, 1.0, &mut rng);
        let mut m = MilpModel::new();
        let u = m.add_var(-1.0, 1.0);
        let q = encode_q_network(&mut m, &net, &z, &[u]).unwrap();
        m.set_objective(LinExpr::single(q, 1.0));
        let s = bb_solve(&m).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);

        let mut best = f64::NEG_INFINITY;
        let steps = 2000;
        for k in 0..=steps {
            let uu = -1.0 + 2.0 * (k as f64) / (steps as f64);
            let v = mlp_forward(&net, &Tensor::vector(vec![uu, z.get(0), z.get(1)])).unwrap().0.get(0);
            best = best.max(v);
        }
        assert!((s.objective - best).abs() < 1e-3, "milp {} vs grid {}", s.objective, best);
        assert!(s.objective >= best - 1e-9, "milp must dominate any grid point");
    }

    #[test]
    fn oversized_bounds_are_rejected() {
        let mut net = random_q_head(&mut ChaCha8Rng::seed_from_u64(3), 1, 1);
        net.layers[0].weight.data_mut().iter_mut().for_each(|w| *w *= 1e7);
        let mut m = MilpModel::new();
        let u = m.add_var(-1.0, 1.0);
        let err = encode_q_network(&mut m, &net, &Tensor::vector(vec![1.0]), &[u]).unwrap_err();
        assert!(matches!(err, MilpError::BoundTooLarge { .. }));
    }

    #[test]
    fn wrong_embedding_dim_is_rejected() {
        let net = random_q_head(&mut ChaCha8Rng::seed_from_u64(4), 2, 2);
        let mut m = MilpModel::new();
        let u: Vec<usize> = (0..2).map(|_| m.add_var(-1.0, 1.0)).collect();
        let err = encode_q_network(&mut m, &net, &Tensor::vector(vec![1.0]), &u).unwrap_err();
        assert!(matches!(err, MilpError::BadModel(_)));
    }
}
