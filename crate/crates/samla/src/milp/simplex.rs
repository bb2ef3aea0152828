//! Two-phase dense primal simplex with Bland's anti-cycling rule.
//!
//! Variables with general bounds are shifted/split into nonnegative columns;
//! finite upper bounds become explicit rows. Dense tableaus are fine here:
//! every model this crate builds stays well under a thousand columns.

use super::{MilpError, MilpModel, MilpSolution, Sense, SolveStatus};

const PIVOT_TOL: f64 = 1e-9;
/// Phase-1 objective must reach (near) zero for feasibility.
const FEAS_TOL: f64 = 1e-7;
const MAX_ITERS: u64 = 100_000;

#[derive(Debug, Clone, Copy)]
enum Recover {
    /// `x = offset + sign * y_col`
    Shift { col: usize, offset: f64, sign: f64 },
    /// `x = y_pos - y_neg` (free variable)
    Split { pos: usize, neg: usize },
}

struct Standard {
    recover: Vec<Recover>,
    n_cols: usize,
    /// Dense rows over the y columns.
    rows: Vec<(Vec<f64>, Sense, f64)>,
    obj: Vec<f64>,
    obj_const: f64,
}

fn to_standard(model: &MilpModel) -> Standard {
    let n_vars = model.num_vars();
    let mut recover = Vec::with_capacity(n_vars);
    let mut n_cols = 0usize;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();

    for i in 0..n_vars {
        let v = model.var(i);
        if v.lower.is_finite() {
            let col = n_cols;
            n_cols += 1;
            recover.push(Recover::Shift { col, offset: v.lower, sign: 1.0 });
            if v.upper.is_finite() {
                upper_rows.push((col, v.upper - v.lower));
            }
        } else if v.upper.is_finite() {
            let col = n_cols;
            n_cols += 1;
            recover.push(Recover::Shift { col, offset: v.upper, sign: -1.0 });
        } else {
            let (pos, neg) = (n_cols, n_cols + 1);
            n_cols += 2;
            recover.push(Recover::Split { pos, neg });
        }
    }

    let transform = |expr: &super::LinExpr| -> (Vec<f64>, f64) {
        let mut coeffs = vec![0.0; n_cols];
        let mut constant = expr.constant();
        for &(var, a) in expr.terms() {
            match recover[var] {
                Recover::Shift { col, offset, sign } => {
                    coeffs[col] += a * sign;
                    constant += a * offset;
                }
                Recover::Split { pos, neg } => {
                    coeffs[pos] += a;
                    coeffs[neg] -= a;
                }
            }
        }
        (coeffs, constant)
    };

    let mut rows = Vec::with_capacity(model.constraints().len() + upper_rows.len());
    for c in model.constraints() {
        let (coeffs, constant) = transform(&c.expr);
        rows.push((coeffs, c.sense, c.rhs - constant));
    }
    for (col, ub) in upper_rows {
        let mut coeffs = vec![0.0; n_cols];
        coeffs[col] = 1.0;
        rows.push((coeffs, Sense::Le, ub));
    }

    let (obj, obj_const) = transform(model.objective());
    Standard { recover, n_cols, rows, obj, obj_const }
}

enum RunOutcome {
    Optimal,
    Unbounded,
    IterLimit,
}

/// Bland's rule iterations on a full tableau. `cost[j]` holds `z_j - c_j`
/// (optimal when all nonnegative, maximization); last cell is the objective.
fn run(
    tableau: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &mut [f64],
    allowed: &[bool],
    iters: &mut u64,
) -> RunOutcome {
    let m = tableau.len();
    let width = cost.len();
    let rhs = width - 1;
    loop {
        if *iters >= MAX_ITERS {
            return RunOutcome::IterLimit;
        }
        // Entering: lowest column index with negative reduced cost.
        let mut enter = None;
        for j in 0..rhs {
            if allowed[j] && cost[j] < -PIVOT_TOL {
                enter = Some(j);
                break;
            }
        }
        let Some(j) = enter else { return RunOutcome::Optimal };

        // Leaving: min ratio; ties go to the smallest basis variable index.
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = tableau[i][j];
            if a > PIVOT_TOL {
                let ratio = tableau[i][rhs] / a;
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br - PIVOT_TOL
                            || (ratio < br + PIVOT_TOL && basis[i] < basis[bi])
                        {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((r, _)) = leave else { return RunOutcome::Unbounded };

        // Pivot on (r, j).
        let piv = tableau[r][j];
        for v in tableau[r].iter_mut() {
            *v /= piv;
        }
        for i in 0..m {
            if i != r {
                let f = tableau[i][j];
                if f != 0.0 {
                    for k in 0..width {
                        tableau[i][k] -= f * tableau[r][k];
                    }
                    tableau[i][j] = 0.0;
                }
            }
        }
        let f = cost[j];
        if f != 0.0 {
            for k in 0..width {
                cost[k] -= f * tableau[r][k];
            }
            cost[j] = 0.0;
        }
        basis[r] = j;
        *iters += 1;
    }
}

/// Solves the LP relaxation of `model` (binary markers ignored).
///
/// Infeasible and Unbounded come back as statuses, not errors; an error
/// means the model itself is malformed.
pub fn lp_solve(model: &MilpModel) -> Result<MilpSolution, MilpError> {
    model.validate()?;
    let std_form = to_standard(model);
    let n = std_form.n_cols;
    let m = std_form.rows.len();

    // Column layout: y columns, then one slack/surplus/artificial block
    // assigned row by row.
    let mut extra = 0usize;
    for (_, sense, rhs) in &std_form.rows {
        let flip = *rhs < 0.0;
        let eff = effective_sense(*sense, flip);
        extra += match eff {
            Sense::Le => 1,
            Sense::Ge => 2,
            Sense::Eq => 1,
        };
    }
    let width = n + extra + 1;
    let rhs_col = width - 1;

    let mut tableau: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut basis = vec![0usize; m];
    let mut artificial = vec![false; width - 1];
    let mut cursor = n;
    for (i, (coeffs, sense, rhs)) in std_form.rows.iter().enumerate() {
        let mut row = vec![0.0; width];
        let flip = *rhs < 0.0;
        let s = if flip { -1.0 } else { 1.0 };
        for (j, &a) in coeffs.iter().enumerate() {
            row[j] = s * a;
        }
        row[rhs_col] = s * rhs;
        match effective_sense(*sense, flip) {
            Sense::Le => {
                row[cursor] = 1.0;
                basis[i] = cursor;
                cursor += 1;
            }
            Sense::Ge => {
                row[cursor] = -1.0;
                row[cursor + 1] = 1.0;
                artificial[cursor + 1] = true;
                basis[i] = cursor + 1;
                cursor += 2;
            }
            Sense::Eq => {
                row[cursor] = 1.0;
                artificial[cursor] = true;
                basis[i] = cursor;
                cursor += 1;
            }
        }
        tableau.push(row);
    }

    let mut iters = 0u64;

    // Phase 1: maximize -sum(artificials). Initial basis may contain
    // artificials with cost -1, so fold their rows into the cost row.
    let needs_phase1 = basis.iter().any(|&b| artificial[b]);
    if needs_phase1 {
        let mut cost = vec![0.0; width];
        for j in 0..width - 1 {
            if artificial[j] {
                cost[j] = 1.0; // z_j - c_j with c_j = -1, z_j = 0
            }
        }
        for (i, row) in tableau.iter().enumerate() {
            if artificial[basis[i]] {
                // c_B = -1 on this row.
                for k in 0..width {
                    cost[k] -= row[k];
                }
            }
        }
        let allowed = vec![true; width - 1];
        match run(&mut tableau, &mut basis, &mut cost, &allowed, &mut iters) {
            RunOutcome::Optimal => {}
            RunOutcome::Unbounded => unreachable!("phase 1 objective is bounded above by 0"),
            RunOutcome::IterLimit => {
                return Ok(MilpSolution { status: SolveStatus::IterLimit, values: Vec::new(), objective: f64::NEG_INFINITY, nodes: iters });
            }
        }
        if -cost[rhs_col] > FEAS_TOL {
            return Ok(MilpSolution { status: SolveStatus::Infeasible, values: Vec::new(), objective: f64::NEG_INFINITY, nodes: iters });
        }
        // Drive any zero-valued artificials out of the basis where possible.
        for i in 0..m {
            if artificial[basis[i]] {
                let mut pivot_col = None;
                for j in 0..n {
                    if tableau[i][j].abs() > PIVOT_TOL {
                        pivot_col = Some(j);
                        break;
                    }
                }
                if let Some(j) = pivot_col {
                    let piv = tableau[i][j];
                    for v in tableau[i].iter_mut() {
                        *v /= piv;
                    }
                    for r in 0..m {
                        if r != i {
                            let f = tableau[r][j];
                            if f != 0.0 {
                                for k in 0..width {
                                    tableau[r][k] -= f * tableau[i][k];
                                }
                                tableau[r][j] = 0.0;
                            }
                        }
                    }
                    basis[i] = j;
                }
                // Otherwise the row is redundant; the artificial stays basic
                // at value zero and its column is barred from re-entering.
            }
        }
    }

    // Phase 2: real objective. Rebuild the cost row from the current basis.
    let mut cost = vec![0.0; width];
    let real_cost = |j: usize| -> f64 { if j < n { std_form.obj[j] } else { 0.0 } };
    for j in 0..width - 1 {
        cost[j] = -real_cost(j);
    }
    for (i, row) in tableau.iter().enumerate() {
        let cb = real_cost(basis[i]);
        if cb != 0.0 {
            for k in 0..width {
                cost[k] += cb * row[k];
            }
        }
    }
    let mut allowed = vec![true; width - 1];
    for (j, flag) in allowed.iter_mut().enumerate() {
        if artificial[j] {
            *flag = false;
        }
    }
    let status = match run(&mut tableau, &mut basis, &mut cost, &allowed, &mut iters) {
        RunOutcome::Optimal => SolveStatus::Optimal,
        RunOutcome::Unbounded => {
            return Ok(MilpSolution { status: SolveStatus::Unbounded, values: Vec::new(), objective: f64::INFINITY, nodes: iters });
        }
        RunOutcome::IterLimit => SolveStatus::IterLimit,
    };

    // Extract y, map back to x, clamp into the declared boxes.
    let mut y = vec![0.0; n + extra];
    for (i, &b) in basis.iter().enumerate() {
        y[b] = tableau[i][rhs_col];
    }
    let mut values = vec![0.0; model.num_vars()];
    for (i, rec) in std_form.recover.iter().enumerate() {
        let raw = match *rec {
            Recover::Shift { col, offset, sign } => offset + sign * y[col],
            Recover::Split { pos, neg } => y[pos] - y[neg],
        };
        let v = model.var(i);
        values[i] = raw.clamp(v.lower, v.upper);
    }
    let objective = model.objective().eval(&values);
    debug_assert!(std_form.obj_const.is_finite());
    Ok(MilpSolution { status, values, objective, nodes: iters })
}

fn effective_sense(sense: Sense, flipped: bool) -> Sense {
    match (sense, flipped) {
        (Sense::Le, false) | (Sense::Ge, true) => Sense::Le,
        (Sense::Ge, false) | (Sense::Le, true) => Sense::Ge,
        (Sense::Eq, _) => Sense::Eq,
    }
}
