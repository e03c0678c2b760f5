//! Planning and safe online learning for finite MDPs that stop on first entry
//! into a forbidden set `U` or a target set `E`.
//!
//! A policy is *p-safe* from `x̄` when the probability of hitting `U` before
//! `E` is at most `p`. With a known kernel, [`planner::exact_safe_lp`] finds
//! the reward-optimal p-safe policy through an occupancy-measure LP. With an
//! unknown kernel, [`learner::run_learning`] learns it episode by episode,
//! applying an optimistic policy only when a tightened extended LP is
//! feasible and a provably safe baseline otherwise.

pub mod analysis;
pub mod baseline;
pub mod fixtures;
pub mod learner;
pub mod linalg;
pub mod lp;
pub mod mdp;
pub mod planner;
pub mod policy;
pub mod random;
pub mod sim;

pub use analysis::{
    fixed_horizon_pitfall, is_p_safe, monte_carlo_safety, safety_function, value_function, Horizon,
    SafetyVector, ValueVector,
};
pub use baseline::{min_q, safe_baseline, BaselineSpec};
pub use learner::{compare_proxy_knowledge, run_learning, CountTable, LearnerConfig, LearningLog};
pub use mdp::{validate_mdp, Mdp, ModelFile, StateKind};
pub use planner::{exact_safe_lp, ConfidenceModel};
pub use policy::Policy;
pub use sim::{simulate_episode, EpisodeTrace, Outcome};
