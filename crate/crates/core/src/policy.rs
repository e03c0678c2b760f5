//! Stationary stochastic policies tied to a fixed initial state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Mdp, PROB_TOL};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("initial state {0} is not a taboo state")]
    InitialNotTaboo(String),
    #[error("row for state {state} sums to {sum}")]
    RowSum { state: String, sum: f64 },
    #[error("row for state {state} has invalid entry {p}")]
    BadEntry { state: String, p: f64 },
    #[error("policy has {got} rows, model has {want} states")]
    Shape { got: usize, want: usize },
    #[error("unknown state id {0}")]
    UnknownState(String),
    #[error("unknown action id {0}")]
    UnknownAction(String),
    #[error("missing row for taboo state {0}")]
    MissingRow(String),
    #[error("cannot parse policy: {0}")]
    Parse(String),
}

/// Per-state action distribution. Rows are indexed by state; rows of
/// terminal states are all zero and never consulted.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    initial_state: usize,
    n_actions: usize,
    rows: Vec<f64>,
}

impl Policy {
    /// Build from full per-state rows and validate against `mdp`.
    pub fn new(mdp: &Mdp, initial_state: usize, rows: Vec<Vec<f64>>) -> Result<Self, PolicyError> {
        if rows.len() != mdp.n_states() {
            return Err(PolicyError::Shape { got: rows.len(), want: mdp.n_states() });
        }
        let m = mdp.n_actions();
        let mut flat = vec![0.0; mdp.n_states() * m];
        for (x, row) in rows.iter().enumerate() {
            if !mdp.is_taboo(x) {
                continue;
            }
            if row.len() != m {
                return Err(PolicyError::Shape { got: row.len(), want: m });
            }
            flat[x * m..(x + 1) * m].copy_from_slice(row);
        }
        let policy = Policy { initial_state, n_actions: m, rows: flat };
        policy.validate(mdp)?;
        Ok(policy)
    }

    /// Uniform over actions at every taboo state.
    pub fn uniform(mdp: &Mdp, initial_state: usize) -> Self {
        let m = mdp.n_actions();
        let mut rows = vec![0.0; mdp.n_states() * m];
        for &x in mdp.taboo_states() {
            rows[x * m..(x + 1) * m].fill(1.0 / m as f64);
        }
        Policy { initial_state, n_actions: m, rows }
    }

    /// Same action at every taboo state.
    pub fn deterministic(mdp: &Mdp, initial_state: usize, action: usize) -> Self {
        let m = mdp.n_actions();
        let mut rows = vec![0.0; mdp.n_states() * m];
        for &x in mdp.taboo_states() {
            rows[x * m + action] = 1.0;
        }
        Policy { initial_state, n_actions: m, rows }
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn with_initial_state(mut self, x0: usize) -> Self {
        self.initial_state = x0;
        self
    }

    /// `π(· | x)`.
    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub(crate) fn row_mut(&mut self, x: usize) -> &mut [f64] {
        &mut self.rows[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.rows[x * self.n_actions + a]
    }

    pub fn validate(&self, mdp: &Mdp) -> Result<(), PolicyError> {
        if self.rows.len() != mdp.n_states() * mdp.n_actions() {
            return Err(PolicyError::Shape {
                got: self.rows.len() / self.n_actions.max(1),
                want: mdp.n_states(),
            });
        }
        if self.initial_state >= mdp.n_states() || !mdp.is_taboo(self.initial_state) {
            let id = mdp.state_ids().get(self.initial_state).cloned();
            return Err(PolicyError::InitialNotTaboo(
                id.unwrap_or_else(|| self.initial_state.to_string()),
            ));
        }
        for &x in mdp.taboo_states() {
            let row = self.row(x);
            if let Some(&p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(PolicyError::BadEntry { state: mdp.state_id(x).into(), p });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(PolicyError::RowSum { state: mdp.state_id(x).into(), sum });
            }
        }
        Ok(())
    }

    /// Largest absolute entry difference over taboo rows.
    pub fn max_abs_diff(&self, other: &Policy, mdp: &Mdp) -> f64 {
        mdp.taboo_states()
            .iter()
            .flat_map(|&x| self.row(x).iter().zip(other.row(x)).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn to_file(&self, mdp: &Mdp) -> PolicyFile {
        let rows = mdp
            .taboo_states()
            .iter()
            .map(|&x| {
                let row = (0..self.n_actions)
                    .map(|a| (mdp.action_id(a).to_string(), self.prob(x, a)))
                    .collect();
                (mdp.state_id(x).to_string(), row)
            })
            .collect();
        PolicyFile { initial_state: mdp.state_id(self.initial_state).to_string(), rows }
    }

    pub fn to_json(&self, mdp: &Mdp) -> String {
        serde_json::to_string_pretty(&self.to_file(mdp)).expect("policy serializes")
    }

    pub fn from_json(mdp: &Mdp, text: &str) -> Result<Self, PolicyError> {
        let file: PolicyFile =
            serde_json::from_str(text).map_err(|e| PolicyError::Parse(e.to_string()))?;
        file.resolve(mdp)
    }
}

/// `{ "initial_state": id, "rows": { state: { action: prob } } }`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub initial_state: String,
    pub rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl PolicyFile {
    /// Missing actions in a row are zero; every taboo state needs a row.
    pub fn resolve(&self, mdp: &Mdp) -> Result<Policy, PolicyError> {
        let x0 = mdp
            .state_index(&self.initial_state)
            .ok_or_else(|| PolicyError::UnknownState(self.initial_state.clone()))?;
        let m = mdp.n_actions();
        let mut rows = vec![vec![0.0; m]; mdp.n_states()];
        let mut seen = vec![false; mdp.n_states()];
        for (sid, row) in &self.rows {
            let x = mdp.state_index(sid).ok_or_else(|| PolicyError::UnknownState(sid.clone()))?;
            for (aid, &p) in row {
                let a =
                    mdp.action_index(aid).ok_or_else(|| PolicyError::UnknownAction(aid.clone()))?;
                rows[x][a] = p;
            }
            seen[x] = true;
        }
        if let Some(&x) = mdp.taboo_states().iter().find(|&&x| !seen[x]) {
            return Err(PolicyError::MissingRow(mdp.state_id(x).into()));
        }
        Policy::new(mdp, x0, rows)
    }
}
