//! Occupancy-measure programs.
//!
//! With a known kernel, the optimal p-safe policy comes from an LP over
//! state-action occupancies `γ(x,a)`. With an estimated kernel, optimism over
//! the confidence set is expressed as an extended LP over state-action-state
//! occupancies `β(x,a,y)`, whose box rows tie `β(x,a,·)/Σβ(x,a,·)` to the
//! estimate within the confidence radii.

use thiserror::Error;

use crate::learner::CountTable;
use crate::lp::{solve_lp, LpError, LpProblem, LpStatus, Relation};
use crate::mdp::{Mdp, ModelError, StateKind};
use crate::policy::Policy;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("no p-safe policy exists for this model")]
    InfeasibleModel,
    #[error("occupancy LP is unbounded; the taboo set is not transient")]
    Unbounded,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

impl From<ModelError> for PlannerError {
    fn from(e: ModelError) -> Self {
        PlannerError::Domain(e.to_string())
    }
}

/// Rows with less total mass than this take the fallback row.
const ZERO_MASS: f64 = 1e-10;

/// Empirical-Bernstein radius for one kernel entry:
/// `√(4 p̂(1−p̂) L / (n ∨ 1)) + 14 L / (3 ((n−1) ∨ 1))` with
/// `L = ln(2 |X| |A| K / w)`.
pub fn confidence_radius(
    phat: f64,
    n: u64,
    x_card: usize,
    a_card: usize,
    k_budget: usize,
    w: f64,
) -> Result<f64, PlannerError> {
    if !(w > 0.0 && w < 1.0) {
        return Err(PlannerError::Domain(format!("w must lie in (0,1), got {w}")));
    }
    if !(0.0..=1.0).contains(&phat) {
        return Err(PlannerError::Domain(format!("estimate {phat} is not a probability")));
    }
    let log_term = (2.0 * x_card as f64 * a_card as f64 * k_budget.max(1) as f64 / w).ln();
    let n = n as f64;
    let variance = (4.0 * phat * (1.0 - phat) * log_term / n.max(1.0)).sqrt();
    let range = 14.0 * log_term / (3.0 * (n - 1.0).max(1.0));
    Ok(variance + range)
}

/// `γ(x,a)` over `H × A`, stored in taboo order.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    taboo: Vec<usize>,
    n_actions: usize,
    gamma: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn gamma(&self, x: usize, a: usize) -> f64 {
        let i = self.taboo.iter().position(|&s| s == x).expect("taboo state");
        self.gamma[i * self.n_actions + a]
    }

    pub fn state_mass(&self, x: usize) -> f64 {
        (0..self.n_actions).map(|a| self.gamma(x, a)).sum()
    }

    /// Largest flow-conservation error
    /// `|δ_y(x0) + Σ γ(x,a) P(x,a,y) − Σ_a γ(y,a)|` over `y ∈ H`.
    pub fn flow_residual(&self, mdp: &Mdp, x0: usize) -> f64 {
        self.taboo
            .iter()
            .map(|&y| {
                let inflow: f64 = self
                    .taboo
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &x)| (0..self.n_actions).map(move |a| (i, x, a)))
                    .map(|(i, x, a)| self.gamma[i * self.n_actions + a] * mdp.prob(x, a, y))
                    .sum();
                let start = if y == x0 { 1.0 } else { 0.0 };
                (start + inflow - self.state_mass(y)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `Σ γ(x,a) c(x,a)` for a per-pair cost.
    pub fn integrate(&self, cost: impl Fn(usize, usize) -> f64) -> f64 {
        self.taboo
            .iter()
            .enumerate()
            .flat_map(|(i, &x)| (0..self.n_actions).map(move |a| (i, x, a)))
            .map(|(i, x, a)| self.gamma[i * self.n_actions + a] * cost(x, a))
            .sum()
    }
}

/// `β(x,a,y)` over `H × A × X`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedOccupancy {
    taboo: Vec<usize>,
    n_actions: usize,
    n_states: usize,
    beta: Vec<f64>,
}

impl ExtendedOccupancy {
    pub fn beta(&self, x: usize, a: usize, y: usize) -> f64 {
        let i = self.taboo.iter().position(|&s| s == x).expect("taboo state");
        self.beta[(i * self.n_actions + a) * self.n_states + y]
    }

    /// Marginal `γ(x,a) = Σ_y β(x,a,y)`.
    pub fn marginal(&self) -> OccupancyMeasure {
        let gamma = self.beta.chunks(self.n_states).map(|c| c.iter().sum()).collect();
        OccupancyMeasure { taboo: self.taboo.clone(), n_actions: self.n_actions, gamma }
    }

    /// The kernel implied by `β`, `P̃(x,a,y) = β(x,a,y) / Σ_z β(x,a,z)`, for
    /// pairs with positive mass.
    pub fn implied_kernel(&self, x: usize, a: usize) -> Option<Vec<f64>> {
        let i = self.taboo.iter().position(|&s| s == x)?;
        let start = (i * self.n_actions + a) * self.n_states;
        let row = &self.beta[start..start + self.n_states];
        let total: f64 = row.iter().sum();
        (total > ZERO_MASS).then(|| row.iter().map(|b| b / total).collect())
    }
}

/// Row-normalize an occupancy into a policy; rows with no mass take the
/// fallback row.
pub fn extract_policy(occupancy: &OccupancyMeasure, fallback: &Policy) -> Policy {
    let mut policy = fallback.clone();
    let m = occupancy.n_actions;
    for (i, &x) in occupancy.taboo.iter().enumerate() {
        let mass = &occupancy.gamma[i * m..(i + 1) * m];
        let total: f64 = mass.iter().sum();
        if total > ZERO_MASS {
            for (dst, g) in policy.row_mut(x).iter_mut().zip(mass) {
                *dst = g.max(0.0) / total;
            }
        }
    }
    policy
}

/// Row used at unvisited states by the known-model planner: the first safe
/// action when one exists, uniform otherwise.
pub fn planner_fallback(mdp: &Mdp, x0: usize) -> Policy {
    let mut policy = Policy::uniform(mdp, x0);
    for &x in mdp.taboo_states() {
        if let Some(&a) = mdp.find_safe_actions(x).expect("taboo state").first() {
            let row = policy.row_mut(x);
            row.fill(0.0);
            row[a] = 1.0;
        }
    }
    policy
}

#[derive(Debug, Clone)]
pub struct ExactPlan {
    pub occupancy: OccupancyMeasure,
    pub policy: Policy,
    pub objective: f64,
}

/// Occupancy LP over `γ(x,a)`, `(x,a) ∈ H × A`:
/// maximize `Σ γ r` subject to flow conservation at every `y ∈ H` and
/// `Σ γ κ ≤ p`.
pub fn build_exact_lp(mdp: &Mdp, x0: usize, p: Option<f64>) -> LpProblem {
    let taboo = mdp.taboo_states();
    let m = mdp.n_actions();
    let nv = taboo.len() * m;
    let var = |i: usize, a: usize| i * m + a;
    let mut objective = vec![0.0; nv];
    let mut names = Vec::with_capacity(nv);
    for (i, &x) in taboo.iter().enumerate() {
        for a in 0..m {
            objective[var(i, a)] = mdp.reward(x, a);
            names.push(format!("g({},{})", mdp.state_id(x), mdp.action_id(a)));
        }
    }
    let mut lp = LpProblem::new(objective).with_names(names);
    for &y in taboo {
        let mut row = vec![0.0; nv];
        for (i, &x) in taboo.iter().enumerate() {
            for a in 0..m {
                row[var(i, a)] += mdp.prob(x, a, y);
                if x == y {
                    row[var(i, a)] -= 1.0;
                }
            }
        }
        lp.add(row, Relation::Eq, if y == x0 { -1.0 } else { 0.0 });
    }
    if let Some(p) = p {
        let mut row = vec![0.0; nv];
        for (i, &x) in taboo.iter().enumerate() {
            for a in 0..m {
                row[var(i, a)] = mdp.kappa_unchecked(x, a);
            }
        }
        lp.add(row, Relation::Le, p);
    }
    lp
}

/// Optimal p-safe policy for a known model.
pub fn exact_safe_lp(mdp: &Mdp, x0: usize, p: f64) -> Result<ExactPlan, PlannerError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(PlannerError::Domain(format!("p must lie in [0,1], got {p}")));
    }
    if x0 >= mdp.n_states() || !mdp.is_taboo(x0) {
        return Err(PlannerError::Domain(format!("initial state {x0} is not taboo")));
    }
    let lp = build_exact_lp(mdp, x0, Some(p));
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Infeasible => return Err(PlannerError::InfeasibleModel),
        LpStatus::Unbounded => return Err(PlannerError::Unbounded),
        LpStatus::Optimal => {}
    }
    let occupancy = OccupancyMeasure {
        taboo: mdp.taboo_states().to_vec(),
        n_actions: mdp.n_actions(),
        gamma: sol.assignment,
    };
    let policy = extract_policy(&occupancy, &planner_fallback(mdp, x0));
    Ok(ExactPlan { occupancy, policy, objective: sol.objective_value })
}

/// Estimated kernel, per-entry radii and derived quantities for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceModel {
    kinds: Vec<StateKind>,
    n_actions: usize,
    /// `P̂(x,a,y)` indexed `(x |A| + a) |X| + y`.
    pub phat: Vec<f64>,
    /// `ε(x,a,y)`, same indexing as `phat`.
    pub radii: Vec<f64>,
    /// `ε̂(x,a) = Σ_y ε(x,a,y)`, indexed `x |A| + a`.
    pub eps_hat: Vec<f64>,
    /// `κ̂(x,a) = Σ_{y∈U} P̂(x,a,y)`.
    pub kappa_hat: Vec<f64>,
    pub episode_budget: usize,
    pub confidence: f64,
}

impl ConfidenceModel {
    /// Build from visit counts. Only the partition of `shape` is read.
    pub fn from_counts(
        shape: &Mdp,
        counts: &CountTable,
        episode_budget: usize,
        confidence: f64,
    ) -> Result<Self, PlannerError> {
        let n = shape.n_states();
        let m = shape.n_actions();
        if counts.n_states() != n || counts.n_actions() != m {
            return Err(PlannerError::DimensionMismatch(format!(
                "counts are {}x{}, model is {n}x{m}",
                counts.n_states(),
                counts.n_actions()
            )));
        }
        let phat = crate::learner::estimate_kernel(counts);
        let mut radii = vec![0.0; n * m * n];
        for &x in shape.taboo_states() {
            for a in 0..m {
                let visits = counts.n_sa(x, a);
                for y in 0..n {
                    let i = (x * m + a) * n + y;
                    radii[i] =
                        confidence_radius(phat[i], visits, n, m, episode_budget, confidence)?;
                }
            }
        }
        Ok(Self::assemble(shape.kinds().to_vec(), m, phat, radii, episode_budget, confidence))
    }

    /// The true kernel with zero radii.
    pub fn exact(mdp: &Mdp) -> Self {
        let n = mdp.n_states();
        let m = mdp.n_actions();
        let mut phat = vec![0.0; n * m * n];
        for &x in mdp.taboo_states() {
            for a in 0..m {
                phat[(x * m + a) * n..(x * m + a + 1) * n].copy_from_slice(mdp.row(x, a));
            }
        }
        Self::assemble(mdp.kinds().to_vec(), m, phat, vec![0.0; n * m * n], 1, 0.5)
    }

    /// Explicit estimate and radii, both indexed `(x |A| + a) |X| + y`.
    pub fn from_parts(
        shape: &Mdp,
        phat: Vec<f64>,
        radii: Vec<f64>,
        episode_budget: usize,
        confidence: f64,
    ) -> Result<Self, PlannerError> {
        let len = shape.n_states() * shape.n_actions() * shape.n_states();
        if phat.len() != len || radii.len() != len {
            return Err(PlannerError::DimensionMismatch(format!(
                "expected {len} kernel entries, got {} and {}",
                phat.len(),
                radii.len()
            )));
        }
        if radii.iter().any(|&r| r.is_nan() || r < 0.0) {
            return Err(PlannerError::Domain("radii must be nonnegative".into()));
        }
        Ok(Self::assemble(
            shape.kinds().to_vec(),
            shape.n_actions(),
            phat,
            radii,
            episode_budget,
            confidence,
        ))
    }

    fn assemble(
        kinds: Vec<StateKind>,
        n_actions: usize,
        phat: Vec<f64>,
        radii: Vec<f64>,
        episode_budget: usize,
        confidence: f64,
    ) -> Self {
        let n = kinds.len();
        let m = n_actions;
        let mut eps_hat = vec![0.0; n * m];
        let mut kappa_hat = vec![0.0; n * m];
        for x in 0..n {
            if kinds[x] != StateKind::Taboo {
                continue;
            }
            for a in 0..m {
                let start = (x * m + a) * n;
                eps_hat[x * m + a] = radii[start..start + n].iter().sum();
                let k: f64 = (0..n)
                    .filter(|&y| kinds[y] == StateKind::Forbidden)
                    .map(|y| phat[start + y])
                    .sum();
                kappa_hat[x * m + a] = k.clamp(0.0, 1.0);
            }
        }
        ConfidenceModel {
            kinds,
            n_actions,
            phat,
            radii,
            eps_hat,
            kappa_hat,
            episode_budget,
            confidence,
        }
    }

    pub fn n_states(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn taboo(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&x| self.kinds[x] == StateKind::Taboo).collect()
    }

    pub fn phat(&self, x: usize, a: usize, y: usize) -> f64 {
        self.phat[(x * self.n_actions + a) * self.n_states() + y]
    }

    pub fn radius(&self, x: usize, a: usize, y: usize) -> f64 {
        self.radii[(x * self.n_actions + a) * self.n_states() + y]
    }

    /// Box `[max(0, P̂−ε), min(1, P̂+ε)]` for one entry.
    pub fn bounds(&self, x: usize, a: usize, y: usize) -> (f64, f64) {
        let (p, e) = (self.phat(x, a, y), self.radius(x, a, y));
        ((p - e).max(0.0), (p + e).min(1.0))
    }

    /// Same estimate with every radius multiplied by `factor`.
    pub fn scale_radii(&self, factor: f64) -> Self {
        let radii = self.radii.iter().map(|r| r * factor).collect();
        Self::assemble(
            self.kinds.clone(),
            self.n_actions,
            self.phat.clone(),
            radii,
            self.episode_budget,
            self.confidence,
        )
    }

    /// Whether every true entry `P(x,a,y)`, `x ∈ H`, lies within its radius.
    pub fn contains(&self, truth: &Mdp) -> bool {
        truth.taboo_states().iter().all(|&x| {
            (0..self.n_actions).all(|a| {
                (0..self.n_states()).all(|y| {
                    (truth.prob(x, a, y) - self.phat(x, a, y)).abs() <= self.radius(x, a, y)
                })
            })
        })
    }
}

/// Exploration bonus per pair is capped at `|X|`.
pub fn bonus_cap(n_states: usize) -> f64 {
    n_states as f64
}

/// Extended LP over `β(x,a,y)`, `(x,a,y) ∈ H × A × X`:
///
/// * objective `Σ β(x,a,y) (r(x,a) + min(ε̂(x,a), |X|))`;
/// * flow `δ_y(x0) + Σ_{x,a} β(x,a,y) − Σ_{a,z} β(y,a,z) = 0` for `y ∈ H`;
/// * box `β(x,a,y) − hi Σ_z β(x,a,z) ≤ 0` when `hi < 1` and
///   `lo Σ_z β(x,a,z) − β(x,a,y) ≤ 0` when `lo > 0`;
/// * safety `Σ β(x,a,z) (κ̂(x,a) + 3 ε̂(x,a)) ≤ p`.
///
/// `rewards` is indexed `x |A| + a`.
pub fn build_extended_lp(
    conf: &ConfidenceModel,
    rewards: &[f64],
    x0: usize,
    p: f64,
) -> Result<LpProblem, PlannerError> {
    let n = conf.n_states();
    let m = conf.n_actions();
    if rewards.len() != n * m {
        return Err(PlannerError::DimensionMismatch(format!(
            "reward table has {} entries, expected {}",
            rewards.len(),
            n * m
        )));
    }
    if x0 >= n || conf.kinds[x0] != StateKind::Taboo {
        return Err(PlannerError::Domain(format!("initial state {x0} is not taboo")));
    }
    let taboo = conf.taboo();
    let nv = taboo.len() * m * n;
    let var = |i: usize, a: usize, y: usize| (i * m + a) * n + y;
    let cap = bonus_cap(n);

    let mut objective = vec![0.0; nv];
    for (i, &x) in taboo.iter().enumerate() {
        for a in 0..m {
            let bonus = conf.eps_hat[x * m + a].min(cap);
            for y in 0..n {
                objective[var(i, a, y)] = rewards[x * m + a] + bonus;
            }
        }
    }
    let mut lp = LpProblem::new(objective);

    for (yi, &y) in taboo.iter().enumerate() {
        let mut row = vec![0.0; nv];
        for i in 0..taboo.len() {
            for a in 0..m {
                row[var(i, a, y)] += 1.0;
            }
        }
        for a in 0..m {
            for z in 0..n {
                row[var(yi, a, z)] -= 1.0;
            }
        }
        lp.add(row, Relation::Eq, if y == x0 { -1.0 } else { 0.0 });
    }

    for (i, &x) in taboo.iter().enumerate() {
        for a in 0..m {
            for y in 0..n {
                let (lo, hi) = conf.bounds(x, a, y);
                let mut upper = vec![0.0; nv];
                let mut lower = vec![0.0; nv];
                for z in 0..n {
                    upper[var(i, a, z)] = -hi;
                    lower[var(i, a, z)] = lo;
                }
                upper[var(i, a, y)] += 1.0;
                lower[var(i, a, y)] -= 1.0;
                // rows implied by β ≥ 0 are left out
                if hi < 1.0 {
                    lp.add(upper, Relation::Le, 0.0);
                }
                if lo > 0.0 {
                    lp.add(lower, Relation::Le, 0.0);
                }
            }
        }
    }

    let mut safety = vec![0.0; nv];
    for (i, &x) in taboo.iter().enumerate() {
        for a in 0..m {
            let c = conf.kappa_hat[x * m + a] + 3.0 * conf.eps_hat[x * m + a];
            for z in 0..n {
                safety[var(i, a, z)] = c;
            }
        }
    }
    lp.add(safety, Relation::Le, p);
    Ok(lp)
}

#[derive(Debug, Clone)]
pub struct OptimisticSolve {
    pub policy: Policy,
    pub feasible: bool,
    pub objective: Option<f64>,
    pub occupancy: Option<ExtendedOccupancy>,
    /// Some pair's exploration bonus hit the cap.
    pub bonus_capped: bool,
}

/// Solve the extended LP and extract the episode policy, or return the
/// fallback unchanged when the LP is infeasible.
pub fn solve_optimistic_policy(
    conf: &ConfidenceModel,
    rewards: &[f64],
    x0: usize,
    p: f64,
    fallback: &Policy,
) -> Result<OptimisticSolve, PlannerError> {
    let lp = build_extended_lp(conf, rewards, x0, p)?;
    let cap = bonus_cap(conf.n_states());
    let taboo = conf.taboo();
    let bonus_capped = taboo
        .iter()
        .any(|&x| (0..conf.n_actions()).any(|a| conf.eps_hat[x * conf.n_actions() + a] > cap));
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Infeasible => Ok(OptimisticSolve {
            policy: fallback.clone().with_initial_state(x0),
            feasible: false,
            objective: None,
            occupancy: None,
            bonus_capped,
        }),
        LpStatus::Unbounded => Err(PlannerError::Unbounded),
        LpStatus::Optimal => {
            let occupancy = ExtendedOccupancy {
                taboo,
                n_actions: conf.n_actions(),
                n_states: conf.n_states(),
                beta: sol.assignment,
            };
            let policy =
                extract_policy(&occupancy.marginal(), &fallback.clone().with_initial_state(x0));
            Ok(OptimisticSolve {
                policy,
                feasible: true,
                objective: Some(sol.objective_value),
                occupancy: Some(occupancy),
                bonus_capped,
            })
        }
    }
}
