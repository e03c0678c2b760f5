//! Finite MDP with a taboo / forbidden / target partition of the state space.
//!
//! The process lives in the taboo set `H`, collects rewards there, and is
//! stopped the first time it enters a forbidden state (`U`) or a target state
//! (`E`). Forbidden and target states carry no kernel rows and no rewards.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for every probability comparison.
pub const PROB_TOL: f64 = 1e-9;

/// Role of a state in the partition `X = H ∪ U ∪ E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Taboo,
    Forbidden,
    Target,
}

impl StateKind {
    pub fn is_terminal(self) -> bool {
        !matches!(self, StateKind::Taboo)
    }
}

/// A single structural problem found while validating a model description.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { state: String, action: String, sum: f64 },
    Partition(String),
    UnknownStateRef(String),
    UnknownActionRef(String),
    BadProbability { from: String, action: String, to: String, p: f64 },
    DuplicateEntry(String),
    TerminalEntry(String),
    InvalidProxy(Vec<(String, String, String)>),
    UnsafeDeclaredAction { state: String, action: String },
    HorizonBound(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { state, action, sum } => {
                write!(f, "RowSumError({state},{action},{sum})")
            }
            Violation::Partition(msg) => write!(f, "PartitionError: {msg}"),
            Violation::UnknownStateRef(id) => write!(f, "UnknownStateRef: {id}"),
            Violation::UnknownActionRef(id) => write!(f, "UnknownActionRef: {id}"),
            Violation::BadProbability { from, action, to, p } => {
                write!(f, "BadProbability: P({from},{action},{to}) = {p}")
            }
            Violation::DuplicateEntry(what) => write!(f, "DuplicateEntry: {what}"),
            Violation::TerminalEntry(what) => write!(f, "TerminalEntry: {what}"),
            Violation::InvalidProxy(triples) => {
                write!(f, "InvalidProxy:")?;
                for (x, a, y) in triples {
                    write!(f, " ({x},{a},{y})")?;
                }
                Ok(())
            }
            Violation::UnsafeDeclaredAction { state, action } => {
                write!(f, "UnsafeDeclaredAction: action {action} at state {state} reaches U")
            }
            Violation::HorizonBound(msg) => write!(f, "HorizonBound: {msg}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("state {0} is not in the taboo set")]
    NotTaboo(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("cannot parse model: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read model: {0}")]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// On-disk model description. Ids are strings; unlisted transitions and
/// rewards are zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub partition: BTreeMap<String, StateKind>,
    pub transitions: Vec<TransitionEntry>,
    #[serde(default)]
    pub rewards: Vec<RewardEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub safe_actions: BTreeMap<String, String>,
    pub horizon_bound: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub from: String,
    pub action: String,
    pub to: String,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardEntry {
    pub state: String,
    pub action: String,
    pub r: f64,
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }
}

/// Validated MDP. Immutable once built.
#[derive(Debug, Clone)]
pub struct Mdp {
    states: Vec<String>,
    actions: Vec<String>,
    kinds: Vec<StateKind>,
    // kernel[(x * |A| + a) * |X| + y]
    kernel: Vec<f64>,
    // reward[x * |A| + a]
    reward: Vec<f64>,
    proxy: Option<Vec<usize>>,
    safe_actions: BTreeMap<usize, usize>,
    horizon_bound: usize,
    taboo: Vec<usize>,
    taboo_pos: Vec<Option<usize>>,
    acyclic_bound: Option<usize>,
}

/// Proxy-set check result; `violations` lists `(x, a, y)` with `x` outside
/// the candidate and `P(x,a,y) > 0` for some forbidden `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyReport {
    pub violations: Vec<(usize, usize, usize)>,
}

impl ProxyReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Validate a raw model description and build an [`Mdp`].
pub fn validate_mdp(file: &ModelFile) -> Result<Mdp, ModelError> {
    let mut violations = Vec::new();

    let states = dedup_ids(&file.states, "state", &mut violations);
    let actions = dedup_ids(&file.actions, "action", &mut violations);
    let n = states.len();
    let m = actions.len();
    let state_ix: HashMap<&str, usize> =
        states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let action_ix: HashMap<&str, usize> =
        actions.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    if m == 0 {
        violations.push(Violation::Partition("action set is empty".into()));
    }

    let mut kinds = vec![None; n];
    for (id, kind) in &file.partition {
        match state_ix.get(id.as_str()) {
            Some(&i) => kinds[i] = Some(*kind),
            None => violations.push(Violation::UnknownStateRef(id.clone())),
        }
    }
    for (i, k) in kinds.iter().enumerate() {
        if k.is_none() {
            violations.push(Violation::Partition(format!("state {} has no label", states[i])));
        }
    }
    let kinds: Vec<StateKind> = kinds.into_iter().map(|k| k.unwrap_or(StateKind::Target)).collect();
    for (kind, name) in [
        (StateKind::Taboo, "taboo set H"),
        (StateKind::Forbidden, "forbidden set U"),
        (StateKind::Target, "target set E"),
    ] {
        if !kinds.contains(&kind) {
            violations.push(Violation::Partition(format!("{name} is empty")));
        }
    }

    let mut kernel = vec![0.0; n * m * n];
    let mut seen = BTreeSet::new();
    for t in &file.transitions {
        let x = state_ix.get(t.from.as_str()).copied();
        let a = action_ix.get(t.action.as_str()).copied();
        let y = state_ix.get(t.to.as_str()).copied();
        if x.is_none() {
            violations.push(Violation::UnknownStateRef(t.from.clone()));
        }
        if y.is_none() {
            violations.push(Violation::UnknownStateRef(t.to.clone()));
        }
        if a.is_none() {
            violations.push(Violation::UnknownActionRef(t.action.clone()));
        }
        let (Some(x), Some(a), Some(y)) = (x, a, y) else { continue };
        if !t.p.is_finite() || t.p < 0.0 || t.p > 1.0 {
            violations.push(Violation::BadProbability {
                from: t.from.clone(),
                action: t.action.clone(),
                to: t.to.clone(),
                p: t.p,
            });
            continue;
        }
        if kinds[x].is_terminal() {
            if t.p != 0.0 {
                violations.push(Violation::TerminalEntry(format!(
                    "transition out of terminal state {}",
                    t.from
                )));
            }
            continue;
        }
        if !seen.insert((x, a, y)) {
            violations.push(Violation::DuplicateEntry(format!(
                "transition ({},{},{})",
                t.from, t.action, t.to
            )));
            continue;
        }
        kernel[(x * m + a) * n + y] = t.p;
    }

    for x in 0..n {
        if kinds[x].is_terminal() {
            continue;
        }
        for a in 0..m {
            let row = &mut kernel[(x * m + a) * n..(x * m + a + 1) * n];
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                violations.push(Violation::RowSum {
                    state: states[x].clone(),
                    action: actions[a].clone(),
                    sum,
                });
            } else if sum != 1.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
    }

    let mut reward = vec![0.0; n * m];
    let mut seen_r = BTreeSet::new();
    for r in &file.rewards {
        let x = state_ix.get(r.state.as_str()).copied();
        let a = action_ix.get(r.action.as_str()).copied();
        if x.is_none() {
            violations.push(Violation::UnknownStateRef(r.state.clone()));
        }
        if a.is_none() {
            violations.push(Violation::UnknownActionRef(r.action.clone()));
        }
        let (Some(x), Some(a)) = (x, a) else { continue };
        if !r.r.is_finite() {
            violations.push(Violation::Partition(format!(
                "reward ({},{}) is not finite",
                r.state, r.action
            )));
            continue;
        }
        if kinds[x].is_terminal() {
            violations
                .push(Violation::TerminalEntry(format!("reward on terminal state {}", r.state)));
            continue;
        }
        if !seen_r.insert((x, a)) {
            violations
                .push(Violation::DuplicateEntry(format!("reward ({},{})", r.state, r.action)));
            continue;
        }
        reward[x * m + a] = r.r;
    }

    let proxy = file.proxy.as_ref().map(|ids| {
        let mut out = Vec::new();
        for id in ids {
            match state_ix.get(id.as_str()) {
                Some(&x) if kinds[x] == StateKind::Taboo => out.push(x),
                Some(_) => violations
                    .push(Violation::Partition(format!("proxy state {id} is not a taboo state"))),
                None => violations.push(Violation::UnknownStateRef(id.clone())),
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    });

    let mut safe_actions = BTreeMap::new();
    for (sid, aid) in &file.safe_actions {
        let x = state_ix.get(sid.as_str()).copied();
        let a = action_ix.get(aid.as_str()).copied();
        match (x, a) {
            (Some(x), Some(a)) if kinds[x] == StateKind::Taboo => {
                safe_actions.insert(x, a);
            }
            (Some(_), Some(_)) => violations.push(Violation::Partition(format!(
                "safe action declared for non-taboo state {sid}"
            ))),
            (None, _) => violations.push(Violation::UnknownStateRef(sid.clone())),
            (_, None) => violations.push(Violation::UnknownActionRef(aid.clone())),
        }
    }

    if file.horizon_bound == 0 {
        violations.push(Violation::HorizonBound("horizon_bound must be at least 1".into()));
    }

    if !violations.is_empty() {
        return Err(ModelError::Invalid(violations));
    }

    let mdp = Mdp::assemble(
        states,
        actions,
        kinds,
        kernel,
        reward,
        proxy,
        safe_actions,
        file.horizon_bound,
    );
    mdp.check_knowledge()?;
    Ok(mdp)
}

fn dedup_ids(ids: &[String], what: &str, violations: &mut Vec<Violation>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        if seen.insert(id.as_str()) {
            out.push(id.clone());
        } else {
            violations.push(Violation::DuplicateEntry(format!("{what} id {id}")));
        }
    }
    out
}

impl Mdp {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        states: Vec<String>,
        actions: Vec<String>,
        kinds: Vec<StateKind>,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        proxy: Option<Vec<usize>>,
        safe_actions: BTreeMap<usize, usize>,
        horizon_bound: usize,
    ) -> Mdp {
        let taboo: Vec<usize> =
            (0..kinds.len()).filter(|&x| kinds[x] == StateKind::Taboo).collect();
        let mut taboo_pos = vec![None; kinds.len()];
        for (i, &x) in taboo.iter().enumerate() {
            taboo_pos[x] = Some(i);
        }
        let mut mdp = Mdp {
            states,
            actions,
            kinds,
            kernel,
            reward,
            proxy,
            safe_actions,
            horizon_bound,
            taboo,
            taboo_pos,
            acyclic_bound: None,
        };
        mdp.acyclic_bound = mdp.longest_taboo_path();
        if let Some(bound) = mdp.acyclic_bound {
            if horizon_bound < bound {
                log::warn!(
                    "horizon bound {horizon_bound} is smaller than the longest taboo path ({bound})"
                );
            }
        }
        mdp
    }

    /// Build from index-based parts, running the same checks as
    /// [`validate_mdp`]. Used by generators and tests.
    pub fn from_parts(parts: MdpParts) -> Result<Mdp, ModelError> {
        validate_mdp(&parts.into_model_file())
    }

    // Proxy validity and declared safe actions are checked against the kernel.
    fn check_knowledge(&self) -> Result<(), ModelError> {
        let mut violations = Vec::new();
        if let Some(proxy) = &self.proxy {
            let report = self.validate_proxy_set(proxy);
            if !report.is_valid() {
                violations.push(Violation::InvalidProxy(
                    report
                        .violations
                        .iter()
                        .map(|&(x, a, y)| {
                            (
                                self.states[x].clone(),
                                self.actions[a].clone(),
                                self.states[y].clone(),
                            )
                        })
                        .collect(),
                ));
            }
        }
        for (&x, &a) in &self.safe_actions {
            if self.kappa_unchecked(x, a) > 0.0 {
                violations.push(Violation::UnsafeDeclaredAction {
                    state: self.states[x].clone(),
                    action: self.actions[a].clone(),
                });
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn kind(&self, x: usize) -> StateKind {
        self.kinds[x]
    }

    pub fn kinds(&self) -> &[StateKind] {
        &self.kinds
    }

    pub fn is_taboo(&self, x: usize) -> bool {
        self.kinds[x] == StateKind::Taboo
    }

    /// Taboo states in increasing index order.
    pub fn taboo_states(&self) -> &[usize] {
        &self.taboo
    }

    /// Position of `x` within [`Mdp::taboo_states`].
    pub fn taboo_position(&self, x: usize) -> Option<usize> {
        self.taboo_pos.get(x).copied().flatten()
    }

    pub fn state_id(&self, x: usize) -> &str {
        &self.states[x]
    }

    pub fn action_id(&self, a: usize) -> &str {
        &self.actions[a]
    }

    pub fn state_ids(&self) -> &[String] {
        &self.states
    }

    pub fn action_ids(&self) -> &[String] {
        &self.actions
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s == id)
    }

    pub fn action_index(&self, id: &str) -> Option<usize> {
        self.actions.iter().position(|s| s == id)
    }

    /// `P(x, a, y)`; zero for terminal `x`.
    pub fn prob(&self, x: usize, a: usize, y: usize) -> f64 {
        self.kernel[(x * self.n_actions() + a) * self.n_states() + y]
    }

    /// Kernel row `P(x, a, ·)`.
    pub fn row(&self, x: usize, a: usize) -> &[f64] {
        let n = self.n_states();
        let start = (x * self.n_actions() + a) * n;
        &self.kernel[start..start + n]
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.reward[x * self.n_actions() + a]
    }

    /// Reward table indexed `x * |A| + a`.
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn proxy(&self) -> Option<&[usize]> {
        self.proxy.as_deref()
    }

    pub fn safe_actions(&self) -> &BTreeMap<usize, usize> {
        &self.safe_actions
    }

    pub fn horizon_bound(&self) -> usize {
        self.horizon_bound
    }

    /// Longest number of taboo states on a positive-probability path, when
    /// the taboo subgraph is acyclic.
    pub fn acyclic_horizon(&self) -> Option<usize> {
        self.acyclic_bound
    }

    /// Same model with a different horizon bound.
    pub fn with_horizon_bound(&self, horizon_bound: usize) -> Mdp {
        let mut out = self.clone();
        out.horizon_bound = horizon_bound.max(1);
        out
    }

    /// Same model with the proxy set replaced. The new set is validated.
    pub fn with_proxy(&self, proxy: Option<Vec<usize>>) -> Result<Mdp, ModelError> {
        let mut out = self.clone();
        out.proxy = proxy.map(|mut p| {
            p.sort_unstable();
            p.dedup();
            p
        });
        if let Some(p) = &out.proxy {
            if let Some(&x) = p.iter().find(|&&x| x >= out.n_states() || !out.is_taboo(x)) {
                return Err(ModelError::NotTaboo(x.to_string()));
            }
        }
        out.check_knowledge()?;
        Ok(out)
    }

    /// `κ(x, a) = Σ_{y ∈ U} P(x, a, y)`.
    pub fn kappa(&self, x: usize, a: usize) -> Result<f64, ModelError> {
        self.require_taboo(x)?;
        if a >= self.n_actions() {
            return Err(ModelError::OutOfRange(format!("action index {a}")));
        }
        Ok(self.kappa_unchecked(x, a))
    }

    pub(crate) fn kappa_unchecked(&self, x: usize, a: usize) -> f64 {
        let k: f64 = self
            .row(x, a)
            .iter()
            .zip(&self.kinds)
            .filter(|(_, &k)| k == StateKind::Forbidden)
            .map(|(p, _)| p)
            .sum();
        k.clamp(0.0, 1.0)
    }

    /// Actions with zero one-step probability of entering `U`.
    pub fn find_safe_actions(&self, x: usize) -> Result<Vec<usize>, ModelError> {
        self.require_taboo(x)?;
        Ok((0..self.n_actions()).filter(|&a| self.kappa_unchecked(x, a) == 0.0).collect())
    }

    /// A candidate `U′ ⊆ H` is a proxy set iff no state outside it can move
    /// into `U` in one step.
    pub fn validate_proxy_set(&self, candidate: &[usize]) -> ProxyReport {
        let inside: BTreeSet<usize> = candidate.iter().copied().collect();
        let mut violations = Vec::new();
        for &x in &self.taboo {
            if inside.contains(&x) {
                continue;
            }
            for a in 0..self.n_actions() {
                for (y, &p) in self.row(x, a).iter().enumerate() {
                    if p > 0.0 && self.kinds[y] == StateKind::Forbidden {
                        violations.push((x, a, y));
                    }
                }
            }
        }
        ProxyReport { violations }
    }

    fn require_taboo(&self, x: usize) -> Result<(), ModelError> {
        match self.kinds.get(x) {
            Some(StateKind::Taboo) => Ok(()),
            Some(_) => Err(ModelError::NotTaboo(self.states[x].clone())),
            None => Err(ModelError::OutOfRange(format!("state index {x}"))),
        }
    }

    fn longest_taboo_path(&self) -> Option<usize> {
        let n = self.n_states();
        let m = self.n_actions();
        let succ: Vec<Vec<usize>> = (0..n)
            .map(|x| {
                if !self.is_taboo(x) {
                    return Vec::new();
                }
                let mut s: Vec<usize> = (0..m)
                    .flat_map(|a| {
                        self.row(x, a)
                            .iter()
                            .enumerate()
                            .filter(|&(y, &p)| p > 0.0 && self.is_taboo(y))
                            .map(|(y, _)| y)
                            .collect::<Vec<_>>()
                    })
                    .collect();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        // Kahn's algorithm over the taboo subgraph.
        let mut indeg = vec![0usize; n];
        for &x in &self.taboo {
            for &y in &succ[x] {
                indeg[y] += 1;
            }
        }
        let mut queue: Vec<usize> = self.taboo.iter().copied().filter(|&x| indeg[x] == 0).collect();
        let mut order = Vec::with_capacity(self.taboo.len());
        while let Some(x) = queue.pop() {
            order.push(x);
            for &y in &succ[x] {
                indeg[y] -= 1;
                if indeg[y] == 0 {
                    queue.push(y);
                }
            }
        }
        if order.len() != self.taboo.len() {
            return None;
        }
        let mut depth = vec![1usize; n];
        for &x in order.iter().rev() {
            for &y in &succ[x] {
                depth[x] = depth[x].max(depth[y] + 1);
            }
        }
        self.taboo.iter().map(|&x| depth[x]).max()
    }

    /// Serialize back to the on-disk description.
    pub fn to_model_file(&self) -> ModelFile {
        let n = self.n_states();
        let m = self.n_actions();
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for &x in &self.taboo {
            for a in 0..m {
                for y in 0..n {
                    let p = self.prob(x, a, y);
                    if p > 0.0 {
                        transitions.push(TransitionEntry {
                            from: self.states[x].clone(),
                            action: self.actions[a].clone(),
                            to: self.states[y].clone(),
                            p,
                        });
                    }
                }
                rewards.push(RewardEntry {
                    state: self.states[x].clone(),
                    action: self.actions[a].clone(),
                    r: self.reward(x, a),
                });
            }
        }
        ModelFile {
            states: self.states.clone(),
            actions: self.actions.clone(),
            partition: self.states.iter().cloned().zip(self.kinds.iter().copied()).collect(),
            transitions,
            rewards,
            proxy: self.proxy.as_ref().map(|p| p.iter().map(|&x| self.states[x].clone()).collect()),
            safe_actions: self
                .safe_actions
                .iter()
                .map(|(&x, &a)| (self.states[x].clone(), self.actions[a].clone()))
                .collect(),
            horizon_bound: self.horizon_bound,
        }
    }
}

/// Index-based model description; ids are generated as `"0"`, `"1"`, ...
/// for states and actions.
#[derive(Debug, Clone)]
pub struct MdpParts {
    pub kinds: Vec<StateKind>,
    pub n_actions: usize,
    /// `(x, a, y, p)` entries.
    pub transitions: Vec<(usize, usize, usize, f64)>,
    /// `(x, a, r)` entries.
    pub rewards: Vec<(usize, usize, f64)>,
    pub proxy: Option<Vec<usize>>,
    pub safe_actions: BTreeMap<usize, usize>,
    pub horizon_bound: usize,
}

impl MdpParts {
    fn into_model_file(self) -> ModelFile {
        let sid = |x: usize| x.to_string();
        let aid = |a: usize| a.to_string();
        ModelFile {
            states: (0..self.kinds.len()).map(sid).collect(),
            actions: (0..self.n_actions).map(aid).collect(),
            partition: self.kinds.iter().enumerate().map(|(x, &k)| (sid(x), k)).collect(),
            transitions: self
                .transitions
                .iter()
                .map(|&(x, a, y, p)| TransitionEntry {
                    from: sid(x),
                    action: aid(a),
                    to: sid(y),
                    p,
                })
                .collect(),
            rewards: self
                .rewards
                .iter()
                .map(|&(x, a, r)| RewardEntry { state: sid(x), action: aid(a), r })
                .collect(),
            proxy: self.proxy.map(|p| p.into_iter().map(sid).collect()),
            safe_actions: self.safe_actions.iter().map(|(&x, &a)| (sid(x), aid(a))).collect(),
            horizon_bound: self.horizon_bound,
        }
    }
}
