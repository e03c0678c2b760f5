//! Episode simulation under the stopping time `τ = τ_{U ∪ E}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Mdp, StateKind};
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    HitForbidden,
    HitTarget,
    CapExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<Step>,
    pub outcome: Outcome,
}

impl EpisodeTrace {
    /// Realized stopping time (number of transitions taken).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Default episode cap: ten times the horizon bound.
pub fn default_cap(mdp: &Mdp) -> usize {
    10 * mdp.horizon_bound()
}

/// Independent stream `stream` of the master seed. Streams never overlap, so
/// consumers of one stream cannot perturb another.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Index drawn from a probability vector with a single uniform variate.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Run one episode from `policy.initial_state()` until `U ∪ E` is entered or
/// `cap` transitions have been taken.
pub fn simulate_episode<R: Rng + ?Sized>(
    mdp: &Mdp,
    policy: &Policy,
    rng: &mut R,
    cap: usize,
) -> EpisodeTrace {
    let mut x = policy.initial_state();
    let mut steps = Vec::new();
    while steps.len() < cap {
        let a = sample_index(policy.row(x), rng.gen::<f64>());
        let y = sample_index(mdp.row(x, a), rng.gen::<f64>());
        steps.push(Step { state: x, action: a, reward: mdp.reward(x, a), next_state: y });
        match mdp.kind(y) {
            StateKind::Forbidden => return EpisodeTrace { steps, outcome: Outcome::HitForbidden },
            StateKind::Target => return EpisodeTrace { steps, outcome: Outcome::HitTarget },
            StateKind::Taboo => x = y,
        }
    }
    log::debug!("episode exceeded cap of {cap} steps");
    EpisodeTrace { steps, outcome: Outcome::CapExceeded }
}
