//! Self-contained LP/MILP machinery: model builder, two-phase primal
//! simplex, branch and bound over binaries, interval bound propagation, and
//! big-M encodings of ReLU and absolute-value expressions.
//!
//! Models are small by construction (hundreds of variables), so everything
//! is dense and single-threaded; a model is exclusively owned by one solve.

mod branch;
mod encode;
mod simplex;

pub use branch::{bb_solve, bb_solve_with_limit};
pub use encode::{encode_abs, encode_q_network, encode_relu, interval_bounds, NetBounds};
pub use simplex::lp_solve;

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum MilpError {
    /// Structurally invalid model: bad bounds, dangling variable ids,
    /// non-finite data.
    BadModel(String),
    /// An encoding was asked to big-M a quantity with an infinite bound.
    InfiniteBound { what: &'static str },
    /// Propagated activation bounds exceed 1e6 in magnitude; big-M constants
    /// that large destroy the relaxation. Regularize the network weights.
    BoundTooLarge { bound: f64 },
}

impl fmt::Display for MilpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MilpError::BadModel(msg) => write!(f, "malformed model: {}", msg),
            MilpError::InfiniteBound { what } => {
                write!(f, "{} requires finite bounds for the big-M encoding", what)
            }
            MilpError::BoundTooLarge { bound } => write!(
                f,
                "propagated bound {:.3e} exceeds 1e6; regularize the network weights before encoding",
                bound
            ),
        }
    }
}

impl std::error::Error for MilpError {}

/// Sparse linear expression `sum coeff * var + constant`. Terms are kept
/// sorted by variable id with exact-zero coefficients dropped, so equal
/// expressions have equal representations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        LinExpr::default()
    }

    pub fn from_constant(c: f64) -> Self {
        assert!(c.is_finite(), "LinExpr constant must be finite");
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn single(var: usize, coeff: f64) -> Self {
        let mut e = LinExpr::new();
        e.add_term(var, coeff);
        e
    }

    pub fn add_term(&mut self, var: usize, coeff: f64) {
        assert!(coeff.is_finite(), "LinExpr coefficients must be finite");
        match self.terms.binary_search_by_key(&var, |t| t.0) {
            Ok(i) => {
                self.terms[i].1 += coeff;
                if self.terms[i].1 == 0.0 {
                    self.terms.remove(i);
                }
            }
            Err(i) => {
                if coeff != 0.0 {
                    self.terms.insert(i, (var, coeff));
                }
            }
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        assert!(c.is_finite(), "LinExpr constant must be finite");
        self.constant += c;
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.add_constant(other.constant * scale);
    }

    pub fn scaled(&self, scale: f64) -> LinExpr {
        let mut e = LinExpr::new();
        e.add_scaled(self, scale);
        e
    }

    pub fn terms(&self) -> &[(usize, f64)] {
        &self.terms
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v]).sum::<f64>() + self.constant
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.last().map(|t| t.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sense::Le => write!(f, "<="),
            Sense::Eq => write!(f, "="),
            Sense::Ge => write!(f, ">="),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Var {
    pub lower: f64,
    pub upper: f64,
    pub is_binary: bool,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
}

/// A maximization model. Variables are continuous with (possibly infinite)
/// bounds, or binary with bounds inside [0,1].
#[derive(Debug, Clone, Default)]
pub struct MilpModel {
    vars: Vec<Var>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
}

impl MilpModel {
    pub fn new() -> Self {
        MilpModel::default()
    }

    /// Adds a continuous variable; panics on lower > upper or NaN bounds.
    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        assert!(!lower.is_nan() && !upper.is_nan(), "variable bounds must not be NaN");
        assert!(lower <= upper, "variable bounds must satisfy lower <= upper");
        self.vars.push(Var { lower, upper, is_binary: false });
        self.vars.len() - 1
    }

    pub fn add_binary(&mut self) -> usize {
        self.vars.push(Var { lower: 0.0, upper: 1.0, is_binary: true });
        self.vars.len() - 1
    }

    pub fn add_constraint(&mut self, expr: LinExpr, sense: Sense, rhs: f64) {
        assert!(rhs.is_finite(), "constraint rhs must be finite");
        self.constraints.push(Constraint { expr, sense, rhs });
    }

    pub fn set_objective(&mut self, expr: LinExpr) {
        self.objective = expr;
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn var(&self, id: usize) -> &Var {
        &self.vars[id]
    }

    /// Tightens one variable's bounds; used by branch and bound to fix
    /// binaries. Panics if the new bounds are inverted.
    pub fn set_bounds(&mut self, id: usize, lower: f64, upper: f64) {
        assert!(lower <= upper, "variable bounds must satisfy lower <= upper");
        self.vars[id].lower = lower;
        self.vars[id].upper = upper;
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn binary_ids(&self) -> Vec<usize> {
        (0..self.vars.len()).filter(|&i| self.vars[i].is_binary).collect()
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        for (i, v) in self.vars.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(MilpError::BadModel(format!("variable {} has bounds [{}, {}]", i, v.lower, v.upper)));
            }
            if v.is_binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(MilpError::BadModel(format!("binary variable {} has bounds outside [0,1]", i)));
            }
        }
        let check_refs = |e: &LinExpr, what: &str| -> Result<(), MilpError> {
            if let Some(mv) = e.max_var() {
                if mv >= self.vars.len() {
                    return Err(MilpError::BadModel(format!("{} references unknown variable {}", what, mv)));
                }
            }
            Ok(())
        };
        check_refs(&self.objective, "objective")?;
        for (i, c) in self.constraints.iter().enumerate() {
            check_refs(&c.expr, &format!("constraint {}", i))?;
            if !c.rhs.is_finite() {
                return Err(MilpError::BadModel(format!("constraint {} has non-finite rhs", i)));
            }
        }
        Ok(())
    }

    /// True when `values` satisfies every bound, binary, and constraint
    /// within `tol`.
    pub fn satisfied(&self, values: &[f64], tol: f64) -> bool {
        if values.len() != self.vars.len() {
            return false;
        }
        for (i, v) in self.vars.iter().enumerate() {
            let x = values[i];
            if !x.is_finite() || x < v.lower - tol || x > v.upper + tol {
                return false;
            }
            if v.is_binary && x.min(1.0 - x).abs() > tol {
                return false;
            }
        }
        self.constraints.iter().all(|c| {
            let lhs = c.expr.eval(values) - c.rhs;
            match c.sense {
                Sense::Le => lhs <= tol,
                Sense::Ge => lhs >= -tol,
                Sense::Eq => lhs.abs() <= tol,
            }
        })
    }

    /// Text dump, one line per item:
    ///
    /// ```text
    /// maximize <expr>
    /// var x<id> [<lower>, <upper>] (binary)?
    /// c<idx>: <expr> <=|=|>= <rhs>
    /// ```
    ///
    /// where `<expr>` is `<coeff> x<id> (+|-) ... (+|-) <constant>` with
    /// terms in variable-id order.
    pub fn dump(&self) -> String {
        fn expr_str(e: &LinExpr) -> String {
            let mut s = String::new();
            for (k, &(v, c)) in e.terms().iter().enumerate() {
                if k == 0 {
                    s.push_str(&format!("{} x{}", c, v));
                } else if c < 0.0 {
                    s.push_str(&format!(" - {} x{}", -c, v));
                } else {
                    s.push_str(&format!(" + {} x{}", c, v));
                }
            }
            if e.terms().is_empty() {
                s.push_str(&format!("{}", e.constant()));
            } else if e.constant() != 0.0 {
                if e.constant() < 0.0 {
                    s.push_str(&format!(" - {}", -e.constant()));
                } else {
                    s.push_str(&format!(" + {}", e.constant()));
                }
            }
            s
        }
        let mut out = format!("maximize {}\n", expr_str(&self.objective));
        for (i, v) in self.vars.iter().enumerate() {
            out.push_str(&format!("var x{} [{}, {}]{}\n", i, v.lower, v.upper, if v.is_binary { " binary" } else { "" }));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            out.push_str(&format!("c{}: {} {} {}\n", i, expr_str(&c.expr), c.sense, c.rhs));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

/// Solver result. `values[id]` is the assignment; for `Infeasible` it is
/// empty and the objective is -inf, for `Unbounded` the objective is +inf,
/// and for `IterLimit` it carries the best incumbent found (if any).
#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    /// Simplex iterations (LP) or processed nodes (branch and bound).
    pub nodes: u64,
}
