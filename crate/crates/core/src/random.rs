//! Random instance generators for property checks and benchmarks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::lp::{LpProblem, Relation};
use crate::mdp::{Mdp, MdpParts, StateKind};
use crate::policy::Policy;

#[derive(Debug, Clone, Copy)]
pub struct MdpShape {
    /// Inclusive range for the total number of states.
    pub states: (usize, usize),
    pub actions: (usize, usize),
    /// Restrict taboo-to-taboo edges to increasing state index.
    pub acyclic: bool,
}

impl Default for MdpShape {
    fn default() -> Self {
        MdpShape { states: (6, 10), actions: (2, 3), acyclic: false }
    }
}

/// Random probability vector over `len` entries; `support` entries get mass.
fn random_distribution<R: Rng + ?Sized>(rng: &mut R, support: &[usize], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let weights: Vec<f64> = support.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for (&i, w) in support.iter().zip(weights) {
        out[i] += w / total;
    }
    out
}

/// A valid MDP with 1–2 forbidden and 1–2 target states, a proxy set, and a
/// safe action at every proxy state. Every taboo row leaves `H` with
/// probability at least 0.1, so every policy is transient.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, shape: MdpShape) -> Mdp {
    let n = rng.gen_range(shape.states.0..=shape.states.1).max(3);
    let m = rng.gen_range(shape.actions.0..=shape.actions.1).max(1);
    let n_forbidden = rng.gen_range(1..=2).min(n - 2);
    let n_target = rng.gen_range(1..=2).min(n - 1 - n_forbidden);
    let n_taboo = n - n_forbidden - n_target;

    let mut kinds = vec![StateKind::Taboo; n_taboo];
    kinds.extend(std::iter::repeat_n(StateKind::Forbidden, n_forbidden));
    kinds.extend(std::iter::repeat_n(StateKind::Target, n_target));
    let forbidden: Vec<usize> = (n_taboo..n_taboo + n_forbidden).collect();
    let target: Vec<usize> = (n_taboo + n_forbidden..n).collect();

    let mut taboo: Vec<usize> = (0..n_taboo).collect();
    taboo.shuffle(rng);
    let proxy_len = rng.gen_range(1..=n_taboo);
    let mut proxy: Vec<usize> = taboo[..proxy_len].to_vec();
    proxy.sort_unstable();

    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    let mut safe_actions = BTreeMap::new();
    for x in 0..n_taboo {
        let in_proxy = proxy.binary_search(&x).is_ok();
        let safe = rng.gen_range(0..m);
        if in_proxy {
            safe_actions.insert(x, safe);
        }
        for a in 0..m {
            let successors: Vec<usize> =
                if shape.acyclic { (x + 1..n_taboo).collect() } else { (0..n_taboo).collect() };
            let mut support: Vec<usize> =
                successors.into_iter().filter(|_| rng.gen_bool(0.5)).collect();
            let may_fail = in_proxy && a != safe;
            if may_fail {
                support.extend(forbidden.iter().copied().filter(|_| rng.gen_bool(0.7)));
            }
            support.push(*target.choose(rng).expect("target set is nonempty"));
            let mut row = random_distribution(rng, &support, n);
            // at least 0.1 of the mass leaves H
            let exit: f64 = row[n_taboo..].iter().sum();
            if exit < 0.1 {
                let t = *target.choose(rng).expect("nonempty");
                let scale = 0.9 / (1.0 - exit);
                for (y, p) in row.iter_mut().enumerate() {
                    if y < n_taboo {
                        *p *= scale;
                    }
                }
                let taboo_mass: f64 = row[..n_taboo].iter().sum();
                let other_exit: f64 = row[n_taboo..].iter().sum();
                row[t] += 1.0 - taboo_mass - other_exit;
            }
            for (y, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    transitions.push((x, a, y, p));
                }
            }
            rewards.push((x, a, rng.gen_range(0.0..5.0)));
        }
    }

    let parts = MdpParts {
        kinds,
        n_actions: m,
        transitions,
        rewards,
        proxy: Some(proxy),
        safe_actions,
        horizon_bound: 1,
    };
    // Fix the horizon bound once the real structure is known.
    let mdp = Mdp::from_parts(parts).expect("generated model is valid");
    let bound = mdp.acyclic_horizon().unwrap_or(10 * n_taboo);
    mdp.with_horizon_bound(bound)
}

/// Random stochastic policy; roughly a third of the rows are deterministic.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, mdp: &Mdp, x0: usize) -> Policy {
    let m = mdp.n_actions();
    let rows = (0..mdp.n_states())
        .map(|x| {
            if !mdp.is_taboo(x) {
                return vec![0.0; m];
            }
            if rng.gen_bool(0.33) {
                let mut row = vec![0.0; m];
                row[rng.gen_range(0..m)] = 1.0;
                row
            } else {
                random_distribution(rng, &(0..m).collect::<Vec<_>>(), m)
            }
        })
        .collect();
    Policy::new(mdp, x0, rows).expect("generated policy is valid")
}

/// Small LP with integer data: up to 6 variables and 6 constraints, so at
/// most 12 columns after slack augmentation.
pub fn random_lp<R: Rng + ?Sized>(rng: &mut R) -> LpProblem {
    let n = rng.gen_range(1..=6);
    let rows = rng.gen_range(1..=6);
    let objective = (0..n).map(|_| rng.gen_range(-3..=5) as f64).collect();
    let mut lp = LpProblem::new(objective);
    for _ in 0..rows {
        let coeffs = (0..n)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-4..=5) as f64 })
            .collect();
        let relation = match rng.gen_range(0..10) {
            0..=5 => Relation::Le,
            6..=7 => Relation::Ge,
            _ => Relation::Eq,
        };
        lp.add(coeffs, relation, rng.gen_range(-3..=10) as f64);
    }
    lp
}
