//! Exact evaluation of a fixed policy: safety function `S` and objective `J`
//! by linear solves over the taboo set, plus a Monte-Carlo cross-check.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::Lu;
use crate::mdp::{Mdp, StateKind, PROB_TOL};
use crate::policy::{Policy, PolicyError};
use crate::sim::{default_cap, simulate_episode, stream_rng, Outcome};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("I - P_pi is singular at column {0}; the policy is not transient on H")]
    SingularSystem(usize),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Values over the taboo set, stored in [`Mdp::taboo_states`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TabooVector {
    taboo: Vec<usize>,
    values: Vec<f64>,
}

impl TabooVector {
    pub fn get(&self, x: usize) -> Option<f64> {
        self.taboo.iter().position(|&s| s == x).map(|i| self.values[i])
    }

    pub fn at(&self, x: usize) -> f64 {
        self.get(x).expect("state is in the taboo set")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.taboo.iter().copied().zip(self.values.iter().copied())
    }
}

/// `S_π(x)`: probability of entering `U` before `E` from `x`.
pub type SafetyVector = TabooVector;
/// `J_π(x)`: expected reward collected before `τ`.
pub type ValueVector = TabooVector;

/// Solve `v = c_π + P_π|_H v` over the taboo set.
fn evaluate(
    mdp: &Mdp,
    policy: &Policy,
    per_step: impl Fn(usize, usize) -> f64,
) -> Result<TabooVector, AnalysisError> {
    policy.validate(mdp)?;
    let taboo = mdp.taboo_states();
    let h = taboo.len();
    let mut a = vec![0.0; h * h];
    let mut rhs = vec![0.0; h];
    for (i, &x) in taboo.iter().enumerate() {
        a[i * h + i] += 1.0;
        for (act, &pa) in policy.row(x).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            rhs[i] += pa * per_step(x, act);
            for (j, &y) in taboo.iter().enumerate() {
                a[i * h + j] -= pa * mdp.prob(x, act, y);
            }
        }
    }
    let lu = Lu::factor(h, a).map_err(|s| AnalysisError::SingularSystem(s.column))?;
    Ok(TabooVector { taboo: taboo.to_vec(), values: lu.solve(&rhs) })
}

pub fn safety_function(mdp: &Mdp, policy: &Policy) -> Result<SafetyVector, AnalysisError> {
    let mut s = evaluate(mdp, policy, |x, a| mdp.kappa_unchecked(x, a))?;
    // Round-off can leave values a hair outside [0, 1].
    for v in &mut s.values {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(s)
}

pub fn value_function(mdp: &Mdp, policy: &Policy) -> Result<ValueVector, AnalysisError> {
    evaluate(mdp, policy, |x, a| mdp.reward(x, a))
}

/// `max_x |S(x) − Σ_a π(a|x)[κ(x,a) + Σ_{y∈H} P(x,a,y) S(y)]|`.
pub fn safety_residual(mdp: &Mdp, policy: &Policy, s: &SafetyVector) -> f64 {
    s.iter()
        .map(|(x, sx)| {
            let rhs: f64 = policy
                .row(x)
                .iter()
                .enumerate()
                .map(|(a, &pa)| {
                    let inner: f64 = s.iter().map(|(y, sy)| mdp.prob(x, a, y) * sy).sum();
                    pa * (mdp.kappa_unchecked(x, a) + inner)
                })
                .sum();
            (sx - rhs).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyCheck {
    pub safe: bool,
    /// `p − S(x̄)`.
    pub margin: f64,
    pub value: f64,
}

/// Whether the policy's initial state is p-safe. Ties within `1e-9` count
/// as safe.
pub fn is_p_safe(mdp: &Mdp, policy: &Policy, p: f64) -> Result<SafetyCheck, AnalysisError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(AnalysisError::Domain(format!("p must lie in (0,1), got {p}")));
    }
    let s = safety_function(mdp, policy)?;
    let value = s.at(policy.initial_state());
    Ok(SafetyCheck { safe: value <= p + PROB_TOL, margin: p - value, value })
}

/// Two-sided 99% normal quantile.
const Z99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub episodes: usize,
    pub hits: usize,
    pub cap_exceeded: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

impl McEstimate {
    fn from_counts(episodes: usize, hits: usize, cap_exceeded: usize) -> Self {
        let n = episodes as f64;
        let est = hits as f64 / n;
        let se = (est * (1.0 - est) / n).sqrt();
        let (lower, upper) = if hits == 0 {
            // one-sided exact bound when the normal interval collapses
            (0.0, 1.0 - (0.005f64).powf(1.0 / n))
        } else if hits == episodes {
            ((0.005f64).powf(1.0 / n), 1.0)
        } else {
            ((est - Z99 * se).max(0.0), (est + Z99 * se).min(1.0))
        };
        McEstimate { episodes, hits, cap_exceeded, estimate: est, std_error: se, lower, upper }
    }

    /// `|estimate − exact| ≤ k σ`, with σ taken from the exact value.
    pub fn agrees_with(&self, exact: f64, k: f64) -> bool {
        let sigma = (exact * (1.0 - exact) / self.episodes as f64).sqrt();
        (self.estimate - exact).abs() <= k * sigma + PROB_TOL
    }
}

const MC_SHARDS: u64 = 16;

/// Fraction of `n` simulated episodes that end in `U`, with a 99% interval.
/// Episodes are split into a fixed number of shards, each on its own stream
/// of `seed`, so the result does not depend on the thread count.
pub fn monte_carlo_safety(
    mdp: &Mdp,
    policy: &Policy,
    n: usize,
    seed: u64,
) -> Result<McEstimate, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::Domain("episode count must be at least 1".into()));
    }
    policy.validate(mdp)?;
    let cap = default_cap(mdp);
    let shards = MC_SHARDS.min(n as u64);
    let per = n as u64 / shards;
    let extra = n as u64 % shards;
    let counts: Vec<(usize, usize)> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = stream_rng(seed, shard);
            let count = per + u64::from(shard < extra);
            let mut hits = 0;
            let mut capped = 0;
            for _ in 0..count {
                match simulate_episode(mdp, policy, &mut rng, cap).outcome {
                    Outcome::HitForbidden => hits += 1,
                    Outcome::CapExceeded => capped += 1,
                    Outcome::HitTarget => {}
                }
            }
            (hits, capped)
        })
        .collect();
    let hits = counts.iter().map(|c| c.0).sum();
    let capped = counts.iter().map(|c| c.1).sum();
    Ok(McEstimate::from_counts(n, hits, capped))
}

/// Horizon of the per-instant safety demonstrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Steps(u64),
    Infinite,
}

/// Probability that a process which violates safety with probability `b` at
/// every instant has done so within `t_max` steps: `1 − (1−b)^t_max`.
pub fn fixed_horizon_pitfall(b: f64, t_max: Horizon) -> Result<f64, AnalysisError> {
    if !(b > 0.0 && b < 1.0) {
        return Err(AnalysisError::Domain(format!("b must lie in (0,1), got {b}")));
    }
    Ok(match t_max {
        Horizon::Infinite => 1.0,
        Horizon::Steps(t) => {
            // -expm1(t · ln(1−b)) keeps precision for small b
            let t = t as f64;
            -(t * (-b).ln_1p()).exp_m1()
        }
    })
}

/// States of `mdp` that `policy` can reach from its initial state.
pub fn reachable_states(mdp: &Mdp, policy: &Policy) -> Vec<usize> {
    let mut seen = vec![false; mdp.n_states()];
    let mut stack = vec![policy.initial_state()];
    seen[policy.initial_state()] = true;
    while let Some(x) = stack.pop() {
        if mdp.kind(x) != StateKind::Taboo {
            continue;
        }
        for (a, &pa) in policy.row(x).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (y, &p) in mdp.row(x, a).iter().enumerate() {
                if p > 0.0 && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
    }
    (0..mdp.n_states()).filter(|&x| seen[x]).collect()
}
