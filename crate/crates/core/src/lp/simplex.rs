//! Two-phase dense tableau simplex.
//!
//! Pricing is Dantzig's rule, falling back to Bland's lowest-index rule after
//! a run of non-improving pivots. Each phase runs on right-hand sides
//! shifted by a small deterministic perturbation to break degeneracy; the
//! exact values are then restored from the basis inverse and any remaining
//! infeasibility is repaired with dual simplex pivots.

use std::io::Write;

use super::{LpError, LpProblem, LpSolution, LpStatus, StandardForm, FEAS_TOL, PIVOT_TOL};

/// Reduced costs above `-COST_TOL` are treated as nonnegative.
const COST_TOL: f64 = 1e-9;
/// Phase-1 optimum below `-INFEAS_TOL` means the problem is infeasible.
const INFEAS_TOL: f64 = 1e-8;
/// Consecutive non-improving pivots before pricing falls back to Bland's rule.
const STALL_LIMIT: usize = 20;
/// Ratios within this relative distance count as ties.
const TIE_TOL: f64 = 1e-12;
/// Tableau entries below this in magnitude are flushed to zero after a pivot.
const ZERO_TOL: f64 = 1e-13;
/// Relative size of the right-hand-side perturbation.
const PERTURB: f64 = 1e-7;
/// Basic values below `-REPAIR_TOL` are repaired after restoring the exact
/// right-hand sides.
const REPAIR_TOL: f64 = 1e-11;

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    Tableau::solve(problem, None)
}

/// Like [`solve_lp`], writing the tableau after every pivot to `trace`.
pub fn solve_lp_traced(problem: &LpProblem, trace: &mut dyn Write) -> Result<LpSolution, LpError> {
    Tableau::solve(problem, Some(trace))
}

enum Outcome {
    Optimal,
    Unbounded,
}

struct Tableau<'t> {
    // constraint rows of width `cols + 1`, rhs last
    rows: Vec<Vec<f64>>,
    // objective row: reduced costs, current objective value last
    obj: Vec<f64>,
    basis: Vec<usize>,
    // column that was basic in each original row; these columns hold the
    // basis inverse
    initial_basis: Vec<usize>,
    // right-hand side of each original row
    rhs: Vec<f64>,
    cols: usize,
    // columns that may enter the basis
    allowed: Vec<bool>,
    iterations: usize,
    limit: usize,
    phase: u8,
    last_pivot: f64,
    trace: Option<&'t mut dyn Write>,
}

impl<'t> Tableau<'t> {
    fn solve(problem: &LpProblem, trace: Option<&'t mut dyn Write>) -> Result<LpSolution, LpError> {
        problem.check()?;
        let n = problem.n_vars();
        let sf = StandardForm::from_problem(problem);
        let m = sf.rows.len();
        let width = sf.width();

        // Artificial columns for every row without a slack to start from.
        let needs_art = sf.slack_of_row.iter().filter(|s| s.is_none()).count();
        let cols = width + needs_art;
        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut art = width;
        for i in 0..m {
            let mut row = vec![0.0; cols + 1];
            row[..width].copy_from_slice(&sf.rows[i]);
            row[cols] = sf.rhs[i];
            match sf.slack_of_row[i] {
                Some(s) => basis.push(s),
                None => {
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
            }
            rows.push(row);
        }

        let mut t = Tableau {
            rows,
            obj: vec![0.0; cols + 1],
            initial_basis: basis.clone(),
            basis,
            rhs: sf.rhs.clone(),
            cols,
            allowed: vec![true; cols],
            iterations: 0,
            limit: 50 * (m + cols).max(1),
            phase: 1,
            last_pivot: 0.0,
            trace,
        };

        if needs_art > 0 {
            let mut cost = vec![0.0; cols];
            cost[width..].fill(-1.0);
            t.set_objective(&cost);
            t.perturb();
            t.run()?;
            t.restore(&cost);
            // the phase-1 problem is always feasible
            if !t.repair()? {
                return Err(LpError::Numerical);
            }
            t.run()?;
            if t.obj[cols] < -INFEAS_TOL * (1.0 + max_abs(&sf.rhs)) {
                return Ok(LpSolution::without_point(LpStatus::Infeasible, n, t.iterations));
            }
            t.drive_out_artificials(width);
            for j in width..cols {
                t.allowed[j] = false;
            }
        }

        t.phase = 2;
        let mut cost = sf.cost.clone();
        cost.resize(cols, 0.0);
        t.set_objective(&cost);
        t.perturb();
        // the recession cone does not depend on the right-hand sides, and
        // the unperturbed problem is feasible at this point
        if let Outcome::Unbounded = t.run()? {
            return Ok(LpSolution::without_point(LpStatus::Unbounded, n, t.iterations));
        }
        t.restore(&cost);
        if !t.repair()? {
            return Ok(LpSolution::without_point(LpStatus::Infeasible, n, t.iterations));
        }
        if let Outcome::Unbounded = t.run()? {
            return Ok(LpSolution::without_point(LpStatus::Unbounded, n, t.iterations));
        }

        let mut x = vec![0.0; cols];
        for (i, &b) in t.basis.iter().enumerate() {
            x[b] = t.rows[i][cols];
        }
        let mut assignment: Vec<f64> = x[..n].to_vec();
        for v in &mut assignment {
            if *v < 0.0 && *v > -FEAS_TOL {
                *v = 0.0;
            }
        }
        let (row, by) = problem.max_violation(&assignment);
        if by > FEAS_TOL {
            return Err(LpError::Certificate { row, by });
        }
        Ok(LpSolution {
            status: LpStatus::Optimal,
            objective_value: problem.objective_at(&assignment),
            assignment,
            iterations: t.iterations,
        })
    }

    /// Objective row for `maximize cost·x` under the current basis.
    fn set_objective(&mut self, cost: &[f64]) {
        self.obj = cost.iter().map(|c| -c).collect();
        self.obj.push(0.0);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (o, r) in self.obj.iter_mut().zip(&self.rows[i]) {
                    *o += cb * r;
                }
            }
        }
        for &b in &self.basis {
            self.obj[b] = 0.0;
        }
    }

    /// Shift every basic value up by a small row-dependent amount.
    fn perturb(&mut self) {
        let rhs = self.cols;
        for (i, row) in self.rows.iter_mut().enumerate() {
            // golden-ratio sequence keeps the shifts pairwise distinct
            let w = 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract();
            row[rhs] += PERTURB * w * (1.0 + row[rhs].abs());
        }
    }

    /// Recompute basic values and the objective value from the exact
    /// right-hand sides.
    fn restore(&mut self, cost: &[f64]) {
        let rhs = self.cols;
        for row in &mut self.rows {
            let v: f64 = self.initial_basis.iter().zip(&self.rhs).map(|(&c, &b)| row[c] * b).sum();
            row[rhs] = if v.abs() < ZERO_TOL { 0.0 } else { v };
        }
        self.obj[rhs] = self.basis.iter().zip(&self.rows).map(|(&b, row)| cost[b] * row[rhs]).sum();
    }

    /// Dual simplex pivots until every basic value is nonnegative. Returns
    /// `false` if some row proves the constraints inconsistent.
    fn repair(&mut self) -> Result<bool, LpError> {
        let rhs = self.cols;
        loop {
            let worst = (0..self.rows.len())
                .filter(|&i| self.rows[i][rhs] < -REPAIR_TOL * (1.0 + max_abs(&self.rows[i])))
                .min_by(|&a, &b| self.rows[a][rhs].total_cmp(&self.rows[b][rhs]));
            let Some(r) = worst else {
                for row in &mut self.rows {
                    row[rhs] = row[rhs].max(0.0);
                }
                return Ok(true);
            };
            let row = &self.rows[r];
            let mut enter: Option<(usize, f64)> = None;
            for j in (0..self.cols).filter(|&j| self.allowed[j] && row[j] < -PIVOT_TOL) {
                let ratio = self.obj[j].max(0.0) / -row[j];
                enter = match enter {
                    Some((b, br)) if br < ratio - TIE_TOL * (1.0 + br) => Some((b, br)),
                    Some((b, br)) if br <= ratio + TIE_TOL * (1.0 + br) && row[b] <= row[j] => {
                        Some((b, br))
                    }
                    _ => Some((j, ratio)),
                };
            }
            let Some((c, _)) = enter else {
                return Ok(false);
            };
            if self.iterations >= self.limit {
                return Err(LpError::IterationLimit(self.limit));
            }
            self.pivot(r, c);
        }
    }

    fn run(&mut self) -> Result<Outcome, LpError> {
        let mut stalled = 0usize;
        loop {
            let Some(enter) = self.entering(stalled >= STALL_LIMIT) else {
                return Ok(Outcome::Optimal);
            };
            let Some(leave) = self.ratio_test(enter) else {
                return Ok(Outcome::Unbounded);
            };
            if self.iterations >= self.limit {
                return Err(LpError::IterationLimit(self.limit));
            }
            let before = self.obj[self.cols];
            self.pivot(leave, enter);
            if self.obj[self.cols] > before + COST_TOL * (1.0 + before.abs()) {
                stalled = 0;
            } else {
                stalled += 1;
            }
        }
    }

    /// Dantzig pricing (most negative reduced cost, lowest index on ties);
    /// Bland's lowest-index rule while the objective is stalled.
    fn entering(&self, bland: bool) -> Option<usize> {
        let mut candidates = (0..self.cols).filter(|&j| self.allowed[j] && self.obj[j] < -COST_TOL);
        if bland {
            return candidates.next();
        }
        candidates.fold(None, |best: Option<usize>, j| match best {
            Some(b) if self.obj[b] <= self.obj[j] => Some(b),
            _ => Some(j),
        })
    }

    /// Minimum ratio; ties go to the largest pivot, then the lowest basic
    /// index.
    fn ratio_test(&self, enter: usize) -> Option<usize> {
        let rhs = self.cols;
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.rows.iter().enumerate() {
            let a = row[enter];
            if a <= PIVOT_TOL {
                continue;
            }
            let ratio = row[rhs].max(0.0) / a;
            best = match best {
                None => Some((i, ratio)),
                Some((b, br)) => {
                    let tol = TIE_TOL * (1.0 + br.abs());
                    if ratio < br - tol {
                        Some((i, ratio))
                    } else if ratio > br + tol {
                        Some((b, br))
                    } else {
                        let ab = self.rows[b][enter];
                        if a > ab || (a == ab && self.basis[i] < self.basis[b]) {
                            Some((i, ratio.min(br)))
                        } else {
                            Some((b, br.min(ratio)))
                        }
                    }
                }
            };
        }
        best.map(|(i, _)| i)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        self.iterations += 1;
        let p = self.rows[r][c];
        self.last_pivot = p;
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rows[r][c] = 1.0;
        let pivot_row = std::mem::take(&mut self.rows[r]);
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                    if v.abs() < ZERO_TOL {
                        *v = 0.0;
                    }
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
                if v.abs() < ZERO_TOL {
                    *v = 0.0;
                }
            }
            self.obj[c] = 0.0;
        }
        self.rows[r] = pivot_row;
        self.basis[r] = c;
        self.write_trace(r, c);
    }

    /// After phase 1, pivot zero-valued artificials out of the basis; rows
    /// where no real column can replace them are redundant and dropped.
    fn drive_out_artificials(&mut self, first_art: usize) {
        let mut i = 0;
        while i < self.rows.len() {
            if self.basis[i] < first_art {
                i += 1;
                continue;
            }
            let replacement = (0..first_art).find(|&j| self.rows[i][j].abs() > PIVOT_TOL);
            match replacement {
                Some(j) => {
                    self.pivot(i, j);
                    i += 1;
                }
                None => {
                    self.rows.remove(i);
                    self.basis.remove(i);
                }
            }
        }
    }

    fn write_trace(&mut self, r: usize, c: usize) {
        let Some(out) = self.trace.as_mut() else { return };
        let _ = writeln!(
            out,
            "iter {} phase {} enter {} leave_row {} pivot {} obj {}",
            self.iterations, self.phase, c, r, self.last_pivot, self.obj[self.cols]
        );
        for (row, b) in self.rows.iter().zip(&self.basis) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "  x{b} | {}", cells.join(" "));
        }
        let cells: Vec<String> = self.obj.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(out, "  z  | {}", cells.join(" "));
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
