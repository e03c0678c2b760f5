//! Brute-force LP solver for cross-checking: enumerate every basis of the
//! equality form, keep the feasible ones, and pick the best. Unboundedness is
//! decided by enumerating the vertices of the normalized recession cone.

use super::{LpError, LpProblem, LpSolution, LpStatus, StandardForm};
use crate::linalg::Lu;

/// Column cap after slack augmentation.
pub const ORACLE_MAX_COLUMNS: usize = 12;

const NEG_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;

pub fn vertex_enumeration_oracle(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.check()?;
    let sf = StandardForm::from_problem(problem);
    let width = sf.width();
    if width > ORACLE_MAX_COLUMNS {
        return Err(LpError::TooLarge(width));
    }
    let n = problem.n_vars();
    let mut count = 0usize;

    let Some(vertices) = basic_solutions(&sf.rows, &sf.rhs, width, &mut count) else {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            assignment: vec![0.0; n],
            objective_value: f64::NAN,
            iterations: count,
        });
    };
    if vertices.is_empty() {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            assignment: vec![0.0; n],
            objective_value: f64::NAN,
            iterations: count,
        });
    }

    // Recession directions: d ≥ 0, A d = 0, Σ d = 1.
    let mut cone_rows = sf.rows.clone();
    cone_rows.push(vec![1.0; width]);
    let mut cone_rhs = vec![0.0; sf.rows.len()];
    cone_rhs.push(1.0);
    if let Some(rays) = basic_solutions(&cone_rows, &cone_rhs, width, &mut count) {
        let scale = 1.0 + sf.cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if rays.iter().any(|d| dot(&sf.cost, d) > 1e-9 * scale) {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                assignment: vec![0.0; n],
                objective_value: f64::NAN,
                iterations: count,
            });
        }
    }

    let best = vertices
        .iter()
        .max_by(|a, b| dot(&sf.cost, a).total_cmp(&dot(&sf.cost, b)))
        .expect("nonempty");
    let assignment: Vec<f64> = best[..n].iter().map(|v| v.max(0.0)).collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective_value: problem.objective_at(&assignment),
        assignment,
        iterations: count,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// All basic feasible solutions of `A x = b, x ≥ 0`; `None` if the system
/// `A x = b` itself is inconsistent.
fn basic_solutions(
    rows: &[Vec<f64>],
    rhs: &[f64],
    width: usize,
    count: &mut usize,
) -> Option<Vec<Vec<f64>>> {
    let (rows, rhs) = independent_rows(rows, rhs, width)?;
    let r = rows.len();
    let mut out = Vec::new();
    if r == 0 {
        out.push(vec![0.0; width]);
        return Some(out);
    }
    for subset in Combinations::new(width, r) {
        *count += 1;
        let mut b = vec![0.0; r * r];
        for (i, row) in rows.iter().enumerate() {
            for (k, &j) in subset.iter().enumerate() {
                b[i * r + k] = row[j];
            }
        }
        let Ok(lu) = Lu::factor(r, b) else { continue };
        let xb = lu.solve(&rhs);
        if xb.iter().any(|&v| v < -NEG_TOL || !v.is_finite()) {
            continue;
        }
        let mut x = vec![0.0; width];
        for (k, &j) in subset.iter().enumerate() {
            x[j] = xb[k];
        }
        // guard against ill-conditioned bases
        let residual =
            rows.iter().zip(&rhs).map(|(row, bi)| (dot(row, &x) - bi).abs()).fold(0.0, f64::max);
        if residual < 1e-8 {
            out.push(x);
        }
    }
    Some(out)
}

/// Gaussian elimination on `[A | b]`; returns a maximal independent subset
/// of the original rows, or `None` if some row reduces to `0 = c ≠ 0`.
fn independent_rows(
    rows: &[Vec<f64>],
    rhs: &[f64],
    width: usize,
) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut work: Vec<Vec<f64>> = rows
        .iter()
        .zip(rhs)
        .map(|(r, &b)| {
            let mut v = r.clone();
            v.push(b);
            v
        })
        .collect();
    let mut keep: Vec<usize> = Vec::new();
    let mut pivot_cols: Vec<usize> = Vec::new();
    for i in 0..work.len() {
        for (k, &c) in pivot_cols.iter().enumerate() {
            let (head, tail) = work.split_at_mut(i);
            let f = tail[0][c];
            if f != 0.0 {
                let src: &Vec<f64> = &head[keep[k]];
                for (v, s) in tail[0].iter_mut().zip(src) {
                    *v -= f * s;
                }
            }
        }
        let row = &work[i];
        let scale = 1.0 + row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        match (0..width).max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs())) {
            Some(c) if row[c].abs() > RANK_TOL * scale => {
                let p: f64 = work[i][c];
                for v in work[i].iter_mut() {
                    *v /= p;
                }
                // eliminate this column from earlier kept rows too
                for &k in keep.iter() {
                    let f: f64 = work[k][c];
                    if f != 0.0 {
                        let src = work[i].clone();
                        for (v, s) in work[k].iter_mut().zip(&src) {
                            *v -= f * s;
                        }
                    }
                }
                keep.push(i);
                pivot_cols.push(c);
            }
            _ => {
                if work[i][width].abs() > 1e-9 * scale {
                    return None;
                }
            }
        }
    }
    Some((keep.iter().map(|&i| rows[i].clone()).collect(), keep.iter().map(|&i| rhs[i]).collect()))
}

/// Lexicographic `k`-subsets of `0..n`.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations { n, idx: (0..k).collect(), done: k > n }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Relation::*;
    use super::*;

    #[test]
    fn combinations_count() {
        assert_eq!(Combinations::new(5, 2).count(), 10);
        assert_eq!(Combinations::new(3, 0).count(), 1);
        assert_eq!(Combinations::new(2, 3).count(), 0);
    }

    #[test]
    fn textbook_case() {
        let mut lp = LpProblem::new(vec![1.0, 1.0]);
        lp.add(vec![1.0, 1.0], Le, 1.0);
        let sol = vertex_enumeration_oracle(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_toy() {
        let mut lp = LpProblem::new(vec![1.0]);
        lp.add(vec![1.0], Le, -1.0);
        lp.add(vec![1.0], Ge, 0.0);
        assert_eq!(vertex_enumeration_oracle(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities() {
        let mut lp = LpProblem::new(vec![1.0, 1.0]);
        lp.add(vec![1.0, 1.0], Eq, 1.0);
        lp.add(vec![2.0, 2.0], Eq, 3.0);
        assert_eq!(vertex_enumeration_oracle(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded() {
        let mut lp = LpProblem::new(vec![1.0, 0.0]);
        lp.add(vec![1.0, -1.0], Le, 1.0);
        assert_eq!(vertex_enumeration_oracle(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn too_large() {
        let lp = LpProblem::new(vec![1.0; 13]);
        assert_eq!(vertex_enumeration_oracle(&lp).unwrap_err(), LpError::TooLarge(13));
    }
}
