//! Episodic p-safe learning loop.
//!
//! Every episode builds a confidence model from the visit counts, solves the
//! optimistic extended LP, and falls back to the safe baseline when that LP
//! is infeasible. The applied policy is then rolled out once from the
//! initial state and every observed transition is counted. Regret is scored
//! with exact evaluation under the true kernel.

use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{safety_function, value_function, AnalysisError};
use crate::baseline::{safe_baseline, BaselineError, BaselineSpec};
use crate::mdp::Mdp;
use crate::planner::{exact_safe_lp, solve_optimistic_policy, ConfidenceModel, PlannerError};
use crate::policy::Policy;
use crate::sim::{default_cap, simulate_episode, stream_rng, Outcome};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("episode {episode}: {source}")]
    Analysis { episode: usize, source: AnalysisError },
    #[error("cannot write log: {0}")]
    Io(#[from] io::Error),
    #[error("cannot write log: {0}")]
    Csv(#[from] csv::Error),
}

/// Visit counters `N(x,a)` and `N(x,a,y)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    n_states: usize,
    n_actions: usize,
    n_sa: Vec<u64>,
    n_say: Vec<u64>,
}

impl CountTable {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        CountTable {
            n_states,
            n_actions,
            n_sa: vec![0; n_states * n_actions],
            n_say: vec![0; n_states * n_actions * n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn record(&mut self, x: usize, a: usize, y: usize) {
        self.n_sa[x * self.n_actions + a] += 1;
        self.n_say[(x * self.n_actions + a) * self.n_states + y] += 1;
    }

    pub fn n_sa(&self, x: usize, a: usize) -> u64 {
        self.n_sa[x * self.n_actions + a]
    }

    pub fn n_say(&self, x: usize, a: usize, y: usize) -> u64 {
        self.n_say[(x * self.n_actions + a) * self.n_states + y]
    }

    /// `Σ_y N(x,a,y) = N(x,a)` for every pair.
    pub fn is_consistent(&self) -> bool {
        self.n_sa.iter().enumerate().all(|(i, &n)| {
            self.n_say[i * self.n_states..(i + 1) * self.n_states].iter().sum::<u64>() == n
        })
    }

    /// Every counter of `self` is at least the matching counter of `earlier`.
    pub fn dominates(&self, earlier: &CountTable) -> bool {
        self.n_sa.iter().zip(&earlier.n_sa).all(|(a, b)| a >= b)
            && self.n_say.iter().zip(&earlier.n_say).all(|(a, b)| a >= b)
    }
}

/// `P̂(x,a,y) = N(x,a,y) / (N(x,a) ∨ 1)`, indexed `(x |A| + a) |X| + y`.
/// Unvisited pairs give all-zero rows.
pub fn estimate_kernel(counts: &CountTable) -> Vec<f64> {
    let n = counts.n_states;
    counts
        .n_say
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / counts.n_sa[i / n].max(1) as f64)
        .collect()
}

#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub x0: usize,
    pub p: f64,
    pub w: f64,
    /// Number of episodes to run.
    pub episodes: usize,
    /// `K` in the radius log term; defaults to `episodes`. When the run
    /// outlasts it, it is doubled and radii are rebuilt with the new value.
    pub episode_budget: Option<usize>,
    pub baseline: BaselineSpec,
    pub seed: u64,
    /// Step cap per episode; defaults to `10 𝒯`.
    pub cap: Option<usize>,
}

impl LearnerConfig {
    /// Config for `mdp` using its declared proxy set and safe actions, with
    /// `K = episodes` and the least conservative baseline weight.
    pub fn for_model(
        mdp: &Mdp,
        x0: usize,
        p: f64,
        w: f64,
        episodes: usize,
        seed: u64,
    ) -> Result<Self, LearnError> {
        Ok(LearnerConfig {
            x0,
            p,
            w,
            episodes,
            episode_budget: None,
            baseline: BaselineSpec::from_model(mdp, p, None)?,
            seed,
            cap: None,
        })
    }

    fn check(&self, mdp: &Mdp) -> Result<(), LearnError> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(LearnError::Config(format!("p must lie in (0,1], got {}", self.p)));
        }
        if !(self.w > 0.0 && self.w < 1.0) {
            return Err(LearnError::Config(format!("w must lie in (0,1), got {}", self.w)));
        }
        if self.episodes == 0 {
            return Err(LearnError::Config("episodes must be at least 1".into()));
        }
        if self.x0 >= mdp.n_states() || !mdp.is_taboo(self.x0) {
            return Err(LearnError::Config(format!("initial state {} is not taboo", self.x0)));
        }
        if self.episode_budget == Some(0) {
            return Err(LearnError::Config("episode budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub feasible: bool,
    /// Policy actually applied (after fallback).
    pub policy: Policy,
    pub j: f64,
    pub s: f64,
    /// `J*(x̄) − J(x̄)`.
    pub regret: f64,
    /// `S(x̄) − p`.
    pub constraint_regret: f64,
    pub cum_regret: f64,
    pub tau: usize,
    pub outcome: Outcome,
    pub seed: u64,
    pub bonus_capped: bool,
    /// `K` used in the radius log term this episode.
    pub episode_budget: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningLog {
    pub seed: u64,
    pub p: f64,
    pub optimal_value: f64,
    pub records: Vec<EpisodeRecord>,
    pub final_counts: CountTable,
}

#[derive(Serialize)]
struct CsvRow {
    episode: usize,
    feasible: u8,
    #[serde(rename = "J")]
    j: f64,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "R_k")]
    r_k: f64,
    #[serde(rename = "C_k")]
    c_k: f64,
    cum_regret: f64,
    tau: usize,
    seed: u64,
}

impl LearningLog {
    pub fn cumulative_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| r.constraint_regret > crate::mdp::PROB_TOL).count()
    }

    pub fn feasible_episodes(&self) -> usize {
        self.records.iter().filter(|r| r.feasible).count()
    }

    pub fn cap_exceeded(&self) -> usize {
        self.records.iter().filter(|r| r.outcome == Outcome::CapExceeded).count()
    }

    /// Mean `R_k` over episodes `from..=to` (1-based, inclusive).
    pub fn mean_regret(&self, from: usize, to: usize) -> f64 {
        let slice: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.episode >= from && r.episode <= to)
            .map(|r| r.regret)
            .collect();
        slice.iter().sum::<f64>() / slice.len().max(1) as f64
    }

    /// CSV with header `episode,feasible,J,S,R_k,C_k,cum_regret,tau,seed`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), LearnError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(CsvRow {
                episode: r.episode,
                feasible: u8::from(r.feasible),
                j: r.j,
                s: r.s,
                r_k: r.regret,
                c_k: r.constraint_regret,
                cum_regret: r.cum_regret,
                tau: r.tau,
                seed: r.seed,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Run the learning loop against the true model `truth`. The learner only
/// sees transitions sampled from `truth`, its partition and its rewards; the
/// kernel itself is used for simulation and for scoring regret.
pub fn run_learning(truth: &Mdp, config: &LearnerConfig) -> Result<LearningLog, LearnError> {
    config.check(truth)?;
    let x0 = config.x0;
    let baseline = safe_baseline(truth, &config.baseline, x0)?;
    let optimal_value = exact_safe_lp(truth, x0, config.p)?.objective;
    let cap = config.cap.unwrap_or_else(|| default_cap(truth));
    let mut budget = config.episode_budget.unwrap_or(config.episodes);
    let mut counts = CountTable::new(truth.n_states(), truth.n_actions());
    let mut records = Vec::with_capacity(config.episodes);
    let mut cum_regret = 0.0;

    for k in 1..=config.episodes {
        while k > budget {
            budget *= 2;
            log::info!("episode {k}: radius budget doubled to {budget}");
        }
        let conf = ConfidenceModel::from_counts(truth, &counts, budget, config.w)?;
        let solve = solve_optimistic_policy(&conf, truth.rewards(), x0, config.p, &baseline)?;
        let policy = solve.policy;

        let mut rng = stream_rng(config.seed, k as u64);
        let trace = simulate_episode(truth, &policy, &mut rng, cap);
        for step in &trace.steps {
            counts.record(step.state, step.action, step.next_state);
        }
        if trace.outcome == Outcome::CapExceeded {
            log::warn!("seed {} episode {k}: episode cap {cap} exceeded", config.seed);
        }

        let analysis = |source| LearnError::Analysis { episode: k, source };
        let j = value_function(truth, &policy).map_err(analysis)?.at(x0);
        let s = safety_function(truth, &policy).map_err(analysis)?.at(x0);
        let regret = optimal_value - j;
        cum_regret += regret;
        records.push(EpisodeRecord {
            episode: k,
            feasible: solve.feasible,
            policy,
            j,
            s,
            regret,
            constraint_regret: s - config.p,
            cum_regret,
            tau: trace.len(),
            outcome: trace.outcome,
            seed: config.seed,
            bonus_capped: solve.bonus_capped,
            episode_budget: budget,
        });
    }

    Ok(LearningLog { seed: config.seed, p: config.p, optimal_value, records, final_counts: counts })
}

#[derive(Debug, Clone)]
pub struct ProxyComparison {
    pub with_proxy: LearningLog,
    pub without_proxy: LearningLog,
}

impl ProxyComparison {
    /// Cumulative regret with proxy knowledge is no worse than without.
    pub fn proxy_helps(&self) -> bool {
        self.with_proxy.cumulative_regret() <= self.without_proxy.cumulative_regret()
    }
}

/// Two runs at the same seed: the baseline restricted to the configured
/// proxy set, and the baseline applied on all of `H`.
pub fn compare_proxy_knowledge(
    truth: &Mdp,
    config: &LearnerConfig,
) -> Result<ProxyComparison, LearnError> {
    if config.baseline.proxy.is_none() {
        return Err(LearnError::Config("proxy comparison needs a proxy set".into()));
    }
    let without = LearnerConfig { baseline: config.baseline.without_proxy(), ..config.clone() };
    let (with_proxy, without_proxy) =
        rayon::join(|| run_learning(truth, config), || run_learning(truth, &without));
    Ok(ProxyComparison { with_proxy: with_proxy?, without_proxy: without_proxy? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::example_mdp;

    #[test]
    fn estimate_examples() {
        let mut counts = CountTable::new(5, 2);
        for i in 0..10 {
            counts.record(1, 0, if i < 9 { 3 } else { 4 });
        }
        let phat = estimate_kernel(&counts);
        assert_eq!(phat[2 * 5 + 3], 0.9);
        assert!(phat[..10].iter().all(|&p| p == 0.0));
        assert!(counts.is_consistent());
    }

    #[test]
    fn first_episode_uses_baseline() {
        let mdp = example_mdp();
        let config = LearnerConfig::for_model(&mdp, 0, 0.5, 0.01, 1, 7).unwrap();
        let log = run_learning(&mdp, &config).unwrap();
        assert_eq!(log.records.len(), 1);
        let r = &log.records[0];
        assert!(!r.feasible);
        let baseline = safe_baseline(&mdp, &config.baseline, 0).unwrap();
        assert_eq!(r.policy, baseline);
        assert!((r.s - 0.0872).abs() < 1e-12);
        assert!((log.optimal_value - 3.96875).abs() < 1e-9);
        assert!(log.final_counts.is_consistent());
    }

    #[test]
    fn runs_are_deterministic() {
        let mdp = example_mdp();
        let config = LearnerConfig::for_model(&mdp, 0, 0.5, 0.01, 30, 3).unwrap();
        let a = run_learning(&mdp, &config).unwrap();
        let b = run_learning(&mdp, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn csv_layout() {
        let mdp = example_mdp();
        let config = LearnerConfig::for_model(&mdp, 0, 0.5, 0.01, 2, 1).unwrap();
        let text = run_learning(&mdp, &config).unwrap().to_csv_string();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("episode,feasible,J,S,R_k,C_k,cum_regret,tau,seed"));
        assert!(lines.next().unwrap().starts_with("1,0,"));
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn budget_doubles_when_outlasted() {
        let mdp = example_mdp();
        let mut config = LearnerConfig::for_model(&mdp, 0, 0.5, 0.01, 9, 1).unwrap();
        config.episode_budget = Some(2);
        let log = run_learning(&mdp, &config).unwrap();
        let budgets: Vec<usize> = log.records.iter().map(|r| r.episode_budget).collect();
        assert_eq!(budgets, vec![2, 2, 4, 4, 8, 8, 8, 8, 16]);
    }

    #[test]
    fn bad_config_is_rejected() {
        let mdp = example_mdp();
        let mut config = LearnerConfig::for_model(&mdp, 0, 0.5, 0.01, 1, 1).unwrap();
        config.w = 1.0;
        assert!(matches!(run_learning(&mdp, &config), Err(LearnError::Config(_))));
        config.w = 0.01;
        config.x0 = 3;
        assert!(matches!(run_learning(&mdp, &config), Err(LearnError::Config(_))));
    }
}
