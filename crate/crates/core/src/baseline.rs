//! Safe baseline policy built from prior knowledge only: a safe action at
//! every proxy state and an upper bound on the stopping time.
//!
//! At a proxy state the safe action gets probability `q` and the remaining
//! `1 − q` is split evenly over the other actions; elsewhere in `H` the
//! policy is uniform. Since only proxy states can move into `U`, each visit
//! contributes at most `1 − q` to the safety function and there are at most
//! `𝒯` visits, so `S ≤ 𝒯 (1 − q) ≤ p` whenever `q ≥ 1 − p/𝒯`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::mdp::Mdp;
use crate::policy::Policy;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no safe action given for proxy state {0}")]
    MissingSafeAction(String),
    #[error("q = {q} is outside [{min}, 1]")]
    InvalidQ { q: f64, min: f64 },
    #[error("action {action} is not safe at state {state}")]
    UnsafeAction { state: String, action: String },
    #[error("domain error: {0}")]
    Domain(String),
}

/// Least conservative admissible mixing weight, `max(0, 1 − p/𝒯)`.
pub fn min_q(p: f64, horizon_bound: usize) -> Result<f64, BaselineError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(BaselineError::Domain(format!("p must lie in (0,1], got {p}")));
    }
    if horizon_bound == 0 {
        return Err(BaselineError::Domain("horizon bound must be at least 1".into()));
    }
    Ok((1.0 - p / horizon_bound as f64).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSpec {
    pub q: f64,
    /// Proxy states `U′`, or `None` for `U′ = H`.
    pub proxy: Option<Vec<usize>>,
    pub safe_action: BTreeMap<usize, usize>,
    pub horizon_bound: usize,
    pub p: f64,
}

impl BaselineSpec {
    /// Spec taken from the model's own proxy set and safe actions, with
    /// `q = min_q(p, 𝒯)` unless overridden.
    pub fn from_model(mdp: &Mdp, p: f64, q: Option<f64>) -> Result<Self, BaselineError> {
        let horizon_bound = mdp.horizon_bound();
        let q = match q {
            Some(q) => q,
            None => min_q(p, horizon_bound)?,
        };
        let spec = BaselineSpec {
            q,
            proxy: mdp.proxy().map(|p| p.to_vec()),
            safe_action: mdp.safe_actions().clone(),
            horizon_bound,
            p,
        };
        Ok(spec)
    }

    /// Same spec with `U′ = H`.
    pub fn without_proxy(&self) -> Self {
        BaselineSpec { proxy: None, ..self.clone() }
    }

    pub fn proxy_states(&self, mdp: &Mdp) -> Vec<usize> {
        match &self.proxy {
            Some(p) => p.clone(),
            None => mdp.taboo_states().to_vec(),
        }
    }

    pub fn validate(&self, mdp: &Mdp) -> Result<(), BaselineError> {
        let min = min_q(self.p, self.horizon_bound)?;
        if !(self.q >= min && self.q <= 1.0) {
            return Err(BaselineError::InvalidQ { q: self.q, min });
        }
        for x in self.proxy_states(mdp) {
            match self.safe_action.get(&x) {
                Some(&a) if a < mdp.n_actions() => {}
                Some(&a) => {
                    return Err(BaselineError::Domain(format!("action index {a} out of range")))
                }
                None => return Err(BaselineError::MissingSafeAction(mdp.state_id(x).into())),
            }
        }
        Ok(())
    }
}

/// Check every declared safe action at the proxy states against the kernel.
pub fn check_safe_actions(mdp: &Mdp, spec: &BaselineSpec) -> Result<(), BaselineError> {
    for x in spec.proxy_states(mdp) {
        let a = *spec
            .safe_action
            .get(&x)
            .ok_or_else(|| BaselineError::MissingSafeAction(mdp.state_id(x).into()))?;
        if mdp.kappa_unchecked(x, a) > 0.0 {
            return Err(BaselineError::UnsafeAction {
                state: mdp.state_id(x).into(),
                action: mdp.action_id(a).into(),
            });
        }
    }
    Ok(())
}

/// The baseline policy for initial state `x0`. Safe actions are trusted as
/// given; use [`check_safe_actions`] to verify them against a known kernel.
pub fn safe_baseline(mdp: &Mdp, spec: &BaselineSpec, x0: usize) -> Result<Policy, BaselineError> {
    spec.validate(mdp)?;
    let m = mdp.n_actions();
    let mut policy = Policy::uniform(mdp, x0);
    for x in spec.proxy_states(mdp) {
        let safe = spec.safe_action[&x];
        let row = policy.row_mut(x);
        if m == 1 {
            row[0] = 1.0;
            continue;
        }
        let rest = (1.0 - spec.q) / (m - 1) as f64;
        for (a, v) in row.iter_mut().enumerate() {
            *v = if a == safe { spec.q } else { rest };
        }
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::safety_function;
    use crate::fixtures::example_mdp;
    use crate::mdp::{MdpParts, StateKind::*};

    #[test]
    fn min_q_values() {
        assert!((min_q(0.5, 5).unwrap() - 0.9).abs() < 1e-15);
        assert!((min_q(0.3, 1).unwrap() - 0.7).abs() < 1e-15);
        assert!((min_q(1.0, 5).unwrap() - 0.8).abs() < 1e-15);
        assert!(min_q(1.5, 5).is_err());
        assert!(min_q(0.0, 5).is_err());
        assert!(min_q(0.5, 0).is_err());
    }

    #[test]
    fn example_baseline_rows() {
        let mdp = example_mdp();
        let spec = BaselineSpec::from_model(&mdp, 0.5, None).unwrap();
        assert!((spec.q - 0.9).abs() < 1e-15);
        let pi = safe_baseline(&mdp, &spec, 0).unwrap();
        assert_eq!(pi.row(0), &[0.5, 0.5]);
        for x in [1, 2] {
            assert!((pi.prob(x, 0) - 0.1).abs() < 1e-15);
            assert!((pi.prob(x, 1) - 0.9).abs() < 1e-15);
        }
        let sums_to_one = mdp.taboo_states().iter().all(|&x| pi.row(x).iter().sum::<f64>() == 1.0);
        assert!(sums_to_one);
    }

    #[test]
    fn example_baseline_safety() {
        // S(3) = 0.1·0.8, S(2) = 0.1·0.8 + 0.9·0.2·S(3), S(1) = (S(2)+S(3))/2
        let mdp = example_mdp();
        let spec = BaselineSpec::from_model(&mdp, 0.5, None).unwrap();
        let s = safety_function(&mdp, &safe_baseline(&mdp, &spec, 0).unwrap()).unwrap();
        assert!((s.at(2) - 0.08).abs() < 1e-12);
        assert!((s.at(1) - 0.0944).abs() < 1e-12);
        assert!((s.at(0) - 0.0872).abs() < 1e-12);
    }

    #[test]
    fn q_one_is_fully_safe() {
        let mdp = example_mdp();
        let spec = BaselineSpec::from_model(&mdp, 0.5, Some(1.0)).unwrap();
        let s = safety_function(&mdp, &safe_baseline(&mdp, &spec, 0).unwrap()).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_specs() {
        let mdp = example_mdp();
        let spec = BaselineSpec::from_model(&mdp, 0.5, Some(0.8)).unwrap();
        assert!(matches!(safe_baseline(&mdp, &spec, 0), Err(BaselineError::InvalidQ { .. })));
        let mut spec = BaselineSpec::from_model(&mdp, 0.5, None).unwrap().without_proxy();
        spec.safe_action.remove(&0);
        assert_eq!(
            safe_baseline(&mdp, &spec, 0).unwrap_err(),
            BaselineError::MissingSafeAction("1".into())
        );
        let mut spec = BaselineSpec::from_model(&mdp, 0.5, None).unwrap();
        spec.safe_action.insert(1, 0);
        assert!(matches!(check_safe_actions(&mdp, &spec), Err(BaselineError::UnsafeAction { .. })));
    }

    #[test]
    fn single_action_row_is_deterministic() {
        let mdp = Mdp::from_parts(MdpParts {
            kinds: vec![Taboo, Forbidden, Target],
            n_actions: 1,
            transitions: vec![(0, 0, 2, 1.0)],
            rewards: vec![],
            proxy: None,
            safe_actions: [(0, 0)].into_iter().collect(),
            horizon_bound: 1,
        })
        .unwrap();
        let spec = BaselineSpec::from_model(&mdp, 0.5, Some(0.5)).unwrap();
        assert_eq!(safe_baseline(&mdp, &spec, 0).unwrap().row(0), &[1.0]);
    }
}
