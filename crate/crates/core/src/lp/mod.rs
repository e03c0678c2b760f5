//! Dense linear programs: `maximize c·v` subject to linear rows and `v ≥ 0`.
//!
//! [`solve_lp`] is a two-phase tableau simplex with Bland's rule.
//! [`vertex_enumeration_oracle`] solves tiny instances by brute force and is
//! used only to cross-check the simplex.

mod oracle;
mod simplex;

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use oracle::{vertex_enumeration_oracle, ORACLE_MAX_COLUMNS};
pub use simplex::{solve_lp, solve_lp_traced};

/// Entries smaller than this are not used as pivots.
pub const PIVOT_TOL: f64 = 1e-9;
/// Constraint satisfaction tolerance for returned assignments.
pub const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn flip(self) -> Relation {
        match self {
            Relation::Le => Relation::Ge,
            Relation::Ge => Relation::Le,
            Relation::Eq => Relation::Eq,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub assignment: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
}

impl LpSolution {
    fn without_point(status: LpStatus, n: usize, iterations: usize) -> Self {
        LpSolution { status, assignment: vec![0.0; n], objective_value: f64::NAN, iterations }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("constraint {row} has {got} coefficients, objective has {want}")]
    DimensionMismatch { row: usize, got: usize, want: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("simplex exceeded {0} iterations")]
    IterationLimit(usize),
    #[error("optimal point violates constraint {row} by {by:e}")]
    Certificate { row: usize, by: f64 },
    #[error("phase 1 lost feasibility after restoring the exact right-hand sides")]
    Numerical,
    #[error(
        "problem has {0} columns after slack augmentation; oracle limit is {ORACLE_MAX_COLUMNS}"
    )]
    TooLarge(usize),
}

impl LpProblem {
    /// Empty problem over `n` nonnegative variables named `v0..`.
    pub fn new(objective: Vec<f64>) -> Self {
        let names = (0..objective.len()).map(|i| format!("v{i}")).collect();
        LpProblem { objective, constraints: Vec::new(), names }
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.objective.len());
        self.names = names;
        self
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { coeffs, relation, rhs });
        self
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn check(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite("objective".into()));
        }
        for (row, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(LpError::DimensionMismatch { row, got: c.coeffs.len(), want: n });
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(LpError::NonFinite(format!("constraint {row}")));
            }
        }
        Ok(())
    }

    /// Largest violation of any row or bound by `v`.
    pub fn max_violation(&self, v: &[f64]) -> (usize, f64) {
        let mut worst = (usize::MAX, 0.0);
        for (i, c) in self.constraints.iter().enumerate() {
            let lhs: f64 = c.coeffs.iter().zip(v).map(|(a, x)| a * x).sum();
            let scale = 1.0 + c.rhs.abs();
            let by = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            } / scale;
            if by > worst.1 {
                worst = (i, by);
            }
        }
        for &x in v {
            if -x > worst.1 {
                worst = (usize::MAX, -x);
            }
        }
        worst
    }

    pub fn objective_at(&self, v: &[f64]) -> f64 {
        self.objective.iter().zip(v).map(|(c, x)| c * x).sum()
    }

    /// Line-oriented dump: the objective row, then one constraint per line.
    /// Zero coefficients are omitted.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "max {}", self.linear_form(&self.objective));
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(out, "r{i}: {} {} {}", self.linear_form(&c.coeffs), c.relation, c.rhs);
        }
        out
    }

    fn linear_form(&self, coeffs: &[f64]) -> String {
        let terms: Vec<String> = coeffs
            .iter()
            .zip(&self.names)
            .filter(|(c, _)| **c != 0.0)
            .map(|(c, name)| format!("{c} {name}"))
            .collect();
        if terms.is_empty() {
            "0".into()
        } else {
            terms.join(" + ")
        }
    }
}

/// Equality form `A x = b`, `x ≥ 0`, `b ≥ 0` with one slack or surplus column
/// per inequality. Original variables come first.
#[derive(Debug, Clone)]
pub(crate) struct StandardForm {
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub cost: Vec<f64>,
    /// Column of the slack for rows that are `≤` after sign normalization.
    pub slack_of_row: Vec<Option<usize>>,
}

impl StandardForm {
    pub fn from_problem(problem: &LpProblem) -> StandardForm {
        let n = problem.n_vars();
        let n_ineq = problem.constraints.iter().filter(|c| c.relation != Relation::Eq).count();
        let width = n + n_ineq;
        let mut rows = Vec::with_capacity(problem.constraints.len());
        let mut rhs = Vec::with_capacity(problem.constraints.len());
        let mut slack_of_row = Vec::with_capacity(problem.constraints.len());
        let mut next_slack = n;
        for c in &problem.constraints {
            let (sign, relation) =
                if c.rhs < 0.0 { (-1.0, c.relation.flip()) } else { (1.0, c.relation) };
            let mut row = vec![0.0; width];
            for (dst, &a) in row.iter_mut().zip(&c.coeffs) {
                *dst = sign * a;
            }
            slack_of_row.push(None);
            match relation {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    *slack_of_row.last_mut().unwrap() = Some(next_slack);
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    next_slack += 1;
                }
                Relation::Eq => {}
            }
            rows.push(row);
            rhs.push(sign * c.rhs);
        }
        let mut cost = problem.objective.clone();
        cost.resize(width, 0.0);
        StandardForm { rows, rhs, cost, slack_of_row }
    }

    pub fn width(&self) -> usize {
        self.cost.len()
    }
}
