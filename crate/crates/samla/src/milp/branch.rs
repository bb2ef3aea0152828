//! Best-first branch and bound over binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{lp_solve, MilpError, MilpModel, MilpSolution, SolveStatus};

/// Absolute optimality gap at which an incumbent is accepted.
const GAP: f64 = 1e-6;
/// A relaxation value within this distance of an integer counts as integral.
const INT_TOL: f64 = 1e-6;
pub(crate) const DEFAULT_NODE_LIMIT: u64 = 100_000;

struct Node {
    bound: f64,
    created: u64,
    /// (binary var id, fixed value) pairs accumulated along this branch.
    fixes: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.created == other.created
    }
}
impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on LP bound; earlier creation wins ties for determinism.
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.created.cmp(&self.created))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn bb_solve(model: &MilpModel) -> Result<MilpSolution, MilpError> {
    bb_solve_with_limit(model, DEFAULT_NODE_LIMIT)
}

/// Branch and bound with an explicit node budget. Exhausting the budget
/// returns `IterLimit` carrying the best incumbent found so far.
pub fn bb_solve_with_limit(model: &MilpModel, node_limit: u64) -> Result<MilpSolution, MilpError> {
    model.validate()?;
    let binaries = model.binary_ids();
    let mut work = model.clone();

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::INFINITY, created: 0, fixes: Vec::new() });
    let mut created = 1u64;
    let mut processed = 0u64;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;

    while let Some(node) = heap.pop() {
        if let Some((inc_obj, _)) = &incumbent {
            // Best-first: every remaining node is bounded by this one.
            if node.bound <= inc_obj + GAP {
                break;
            }
        }
        if processed >= node_limit {
            let (objective, values) = match incumbent {
                Some((o, v)) => (o, v),
                None => (f64::NEG_INFINITY, Vec::new()),
            };
            return Ok(MilpSolution { status: SolveStatus::IterLimit, values, objective, nodes: processed });
        }
        processed += 1;

        apply_fixes(&mut work, model, &binaries, &node.fixes);
        let relax = lp_solve(&work)?;
        match relax.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => {
                return Ok(MilpSolution { status: SolveStatus::Unbounded, values: Vec::new(), objective: f64::INFINITY, nodes: processed });
            }
            SolveStatus::IterLimit => {
                let (objective, values) = match incumbent {
                    Some((o, v)) => (o, v),
                    None => (f64::NEG_INFINITY, Vec::new()),
                };
                return Ok(MilpSolution { status: SolveStatus::IterLimit, values, objective, nodes: processed });
            }
            SolveStatus::Optimal => {}
        }
        if let Some((inc_obj, _)) = &incumbent {
            if relax.objective <= inc_obj + GAP {
                continue;
            }
        }

        // Most-fractional binary; ties go to the lowest variable id.
        let mut branch_var = None;
        let mut worst = INT_TOL;
        for &b in &binaries {
            let frac = (relax.values[b] - relax.values[b].round()).abs();
            if frac > worst {
                worst = frac;
                branch_var = Some(b);
            }
        }

        match branch_var {
            None => {
                // Integral: snap binaries exactly and keep if genuinely feasible.
                let mut vals = relax.values.clone();
                for &b in &binaries {
                    vals[b] = vals[b].round();
                }
                let obj = model.objective().eval(&vals);
                if model.satisfied(&vals, 1e-6)
                    && incumbent.as_ref().map_or(true, |(o, _)| obj > *o)
                {
                    incumbent = Some((obj, vals));
                }
            }
            Some(b) => {
                // Cheap repair: round every binary and re-solve once. Gives
                // an early incumbent so the bound test can start pruning.
                if incumbent.is_none() {
                    let rounded: Vec<(usize, f64)> =
                        binaries.iter().map(|&i| (i, relax.values[i].round())).collect();
                    apply_fixes(&mut work, model, &binaries, &rounded);
                    if let Ok(fixed) = lp_solve(&work) {
                        if fixed.status == SolveStatus::Optimal && model.satisfied(&fixed.values, 1e-6) {
                            incumbent = Some((fixed.objective, fixed.values));
                        }
                    }
                }
                for val in [0.0, 1.0] {
                    let mut fixes = node.fixes.clone();
                    fixes.push((b, val));
                    heap.push(Node { bound: relax.objective, created, fixes });
                    created += 1;
                }
            }
        }
    }

    match incumbent {
        Some((objective, values)) => Ok(MilpSolution { status: SolveStatus::Optimal, values, objective, nodes: processed }),
        None => Ok(MilpSolution { status: SolveStatus::Infeasible, values: Vec::new(), objective: f64::NEG_INFINITY, nodes: processed }),
    }
}

/// Resets all binary bounds to the base model, then applies branch fixes.
fn apply_fixes(work: &mut MilpModel, base: &MilpModel, binaries: &[usize], fixes: &[(usize, f64)]) {
    for &b in binaries {
        let v = base.var(b);
        work.set_bounds(b, v.lower, v.upper);
    }
    for &(b, val) in fixes {
        work.set_bounds(b, val, val);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{LinExpr, Sense};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_binaries_matches_lp_solve() {
        let mut m = MilpModel::new();
        let x = m.add_var(0.0, 3.0);
        let y = m.add_var(0.0, 2.0);
        let mut e = LinExpr::single(x, 1.0);
        e.add_term(y, 1.0);
        m.add_constraint(e, Sense::Le, 4.0);
        let mut obj = LinExpr::single(x, 1.0);
        obj.add_term(y, 2.0);
        m.set_objective(obj);
        let lp = lp_solve(&m).unwrap();
        let bb = bb_solve(&m).unwrap();
        assert_eq!(bb.status, SolveStatus::Optimal);
        assert!((bb.objective - lp.objective).abs() < 1e-9);
    }

    #[test]
    fn two_binary_knapsack_picks_the_heavier_item() {
        let mut m = MilpModel::new();
        let a = m.add_binary();
        let b = m.add_binary();
        let mut e = LinExpr::single(a, 1.0);
        e.add_term(b, 1.0);
        m.add_constraint(e, Sense::Le, 1.0);
        let mut obj = LinExpr::single(a, 3.0);
        obj.add_term(b, 2.0);
        m.set_objective(obj);
        let s = bb_solve(&m).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective - 3.0).abs() < 1e-9);
        assert!((s.values[a] - 1.0).abs() < 1e-6);
        assert!(s.values[b].abs() < 1e-6);
    }

    #[test]
    fn impossible_binary_sum_is_infeasible() {
        let mut m = MilpModel::new();
        let a = m.add_binary();
        let b = m.add_binary();
        let mut e = LinExpr::single(a, 1.0);
        e.add_term(b, 1.0);
        m.add_constraint(e, Sense::Ge, 3.0);
        m.set_objective(LinExpr::single(a, 1.0));
        let s = bb_solve(&m).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn node_limit_reports_iter_limit() {
        // 12 binaries with a fractional-optimum knapsack; one node cannot
        // close the gap.
        let mut m = MilpModel::new();
        let mut weight = LinExpr::new();
        let mut obj = LinExpr::new();
        for i in 0..12 {
            let b = m.add_binary();
            weight.add_term(b, 1.0 + (i as f64) * 0.37);
            obj.add_term(b, 2.0 + ((i * 7) % 5) as f64);
        }
        m.add_constraint(weight, Sense::Le, 9.5);
        m.set_objective(obj);
        let s = bb_solve_with_limit(&m, 1).unwrap();
        assert_eq!(s.status, SolveStatus::IterLimit);
    }

    fn random_knapsack(seed: u64, n_bin: usize) -> MilpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MilpModel::new();
        let mut weight = LinExpr::new();
        let mut obj = LinExpr::new();
        for _ in 0..n_bin {
            let b = m.add_binary();
            weight.add_term(b, rng.gen_range(0.2..2.0));
            obj.add_term(b, rng.gen_range(0.1..3.0));
        }
        let cap = rng.gen_range(1.0..(n_bin as f64) * 0.8);
        m.add_constraint(weight, Sense::Le, cap);
        m.set_objective(obj);
        m
    }

    #[test]
    fn random_knapsacks_match_exhaustive_enumeration() {
        for seed in 0..10u64 {
            let n = 8;
            let m = random_knapsack(seed, n);
            let s = bb_solve(&m).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal, "seed {}", seed);

            // Enumerate all 2^8 assignments directly.
            let mut best = f64::NEG_INFINITY;
            for mask in 0u32..(1 << n) {
                let vals: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
                if m.satisfied(&vals, 1e-9) {
                    best = best.max(m.objective().eval(&vals));
                }
            }
            assert!((s.objective - best).abs() < 1e-6, "seed {}: {} vs {}", seed, s.objective, best);
            assert!(m.satisfied(&s.values, 1e-6));
        }
    }

    #[test]
    fn incumbent_dominates_random_roundings() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..5u64 {
            let m = random_knapsack(1000 + seed, 8);
            let s = bb_solve(&m).unwrap();
            for _ in 0..50 {
                let vals: Vec<f64> = (0..8).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
                if m.satisfied(&vals, 1e-9) {
                    assert!(s.objective >= m.objective().eval(&vals) - 1e-6);
                }
            }
        }
    }

    #[test]
    fn mixed_continuous_binary_model_solves() {
        // max 2x + 3b with x <= 1 + 2(1-b): b=0 allows x up to 3.
        let mut m = MilpModel::new();
        let x = m.add_var(0.0, 10.0);
        let b = m.add_binary();
        let mut e = LinExpr::single(x, 1.0);
        e.add_term(b, 2.0);
        m.add_constraint(e, Sense::Le, 3.0);
        let mut obj = LinExpr::single(x, 2.0);
        obj.add_term(b, 3.0);
        m.set_objective(obj);
        let s = bb_solve(&m).unwrap();
        // b=0: obj 6; b=1: x<=1 obj 5.
        assert!((s.objective - 6.0).abs() < 1e-6);
        assert!(s.values[b].abs() < 1e-6);
    }
}
