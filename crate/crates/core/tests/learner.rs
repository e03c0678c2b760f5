use proptest::prelude::*;
use psafe::baseline::safe_baseline;
use psafe::fixtures::example_mdp;
use psafe::learner::{estimate_kernel, EpisodeRecord};
use psafe::planner::ConfidenceModel;
use psafe::random::{random_mdp, random_policy, MdpShape};
use psafe::sim::{default_cap, simulate_episode, stream_rng};
use psafe::*;

fn example_config(episodes: usize, seed: u64) -> LearnerConfig {
    LearnerConfig::for_model(&example_mdp(), 0, 0.5, 0.01, episodes, seed).unwrap()
}

#[test]
fn estimate_converges_under_uniform_play() {
    let mdp = example_mdp();
    let pi = Policy::uniform(&mdp, 0);
    let mut counts = CountTable::new(5, 2);
    let mut rng = stream_rng(31, 0);
    let mut steps = 0;
    while steps < 100_000 {
        for s in simulate_episode(&mdp, &pi, &mut rng, default_cap(&mdp)).steps {
            counts.record(s.state, s.action, s.next_state);
            steps += 1;
        }
    }
    let phat = estimate_kernel(&counts);
    // P(2,1,4): state index 1, action index 0, next state index 3
    assert!((phat[(2 * 5) + 3] - 0.8).abs() < 0.01);
    assert!(counts.is_consistent());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_stay_consistent_and_grow(seed in any::<u64>(), episodes in 1usize..40) {
        let mut rng = stream_rng(seed, 0);
        let mdp = random_mdp(&mut rng, MdpShape::default());
        let pi = random_policy(&mut rng, &mdp, mdp.taboo_states()[0]);
        let mut counts = CountTable::new(mdp.n_states(), mdp.n_actions());
        for _ in 0..episodes {
            let before = counts.clone();
            for s in simulate_episode(&mdp, &pi, &mut rng, 50).steps {
                counts.record(s.state, s.action, s.next_state);
            }
            prop_assert!(counts.is_consistent());
            prop_assert!(counts.dominates(&before));
        }
    }

    #[test]
    fn learning_is_deterministic(seed in any::<u64>()) {
        let mdp = example_mdp();
        let config = LearnerConfig::for_model(&mdp, 0, 0.5, 0.01, 15, seed).unwrap();
        let a = run_learning(&mdp, &config).unwrap();
        let b = run_learning(&mdp, &config).unwrap();
        prop_assert_eq!(a.to_csv_string(), b.to_csv_string());
        prop_assert_eq!(a, b);
    }
}

fn assert_log_invariants(mdp: &Mdp, config: &LearnerConfig, log: &LearningLog) {
    let baseline = safe_baseline(mdp, &config.baseline, config.x0).unwrap();
    let mut prefix = 0.0;
    for r in &log.records {
        prefix += r.regret;
        assert!((r.cum_regret - prefix).abs() < 1e-9);
        assert_eq!(r.constraint_regret, r.s - config.p);
        if !r.feasible {
            assert_eq!(r.policy, baseline, "episode {}", r.episode);
        }
    }
    assert!(log.final_counts.is_consistent());
    let steps: u64 = log.records.iter().map(|r| r.tau as u64).sum();
    let visits: u64 = (0..mdp.n_states())
        .flat_map(|x| (0..mdp.n_actions()).map(move |a| (x, a)))
        .map(|(x, a)| log.final_counts.n_sa(x, a))
        .sum();
    assert_eq!(steps, visits);
}

#[test]
fn short_run_on_the_example() {
    let mdp = example_mdp();
    let config = example_config(300, 4);
    let log = run_learning(&mdp, &config).unwrap();
    assert_log_invariants(&mdp, &config, &log);
    assert!(!log.records[0].feasible);
    assert_eq!(log.violations(), 0);
}

#[test]
fn runs_on_random_models_respect_invariants() {
    for seed in 0..6u64 {
        let mut rng = stream_rng(seed, 3);
        let mdp = random_mdp(&mut rng, MdpShape::default());
        let x0 = mdp.taboo_states()[0];
        let config = LearnerConfig::for_model(&mdp, x0, 0.4, 0.1, 150, seed).unwrap();
        let log = run_learning(&mdp, &config).unwrap();
        assert_log_invariants(&mdp, &config, &log);
        assert_eq!(log.violations(), 0);
    }
}

#[test]
fn feasible_episodes_are_safe_in_a_long_run() {
    // the tightened LP becomes feasible after roughly 10^4 episodes here
    let mdp = example_mdp();
    let config = example_config(20_000, 17);
    let log = run_learning(&mdp, &config).unwrap();
    assert_log_invariants(&mdp, &config, &log);
    let feasible: Vec<&EpisodeRecord> = log.records.iter().filter(|r| r.feasible).collect();
    assert!(!feasible.is_empty());
    assert!(feasible.iter().all(|r| r.s <= config.p));
    assert_eq!(log.violations(), 0);
}

proptest! {
    #[test]
    fn radius_decreases_in_visits_at_fixed_estimate(
        phat in 0.0f64..=1.0,
        n in 2u64..1_000_000,
        k in 1usize..100_000,
        w in 0.001f64..0.999,
    ) {
        let r = |n| psafe::planner::confidence_radius(phat, n, 5, 2, k, w).unwrap();
        prop_assert!(r(n + 1) < r(n));
    }
}

#[test]
fn radii_shrink_along_a_run() {
    // ε̂ also moves with the estimate, so single steps may rise slightly
    let mdp = example_mdp();
    let config = example_config(1, 0);
    let pi = safe_baseline(&mdp, &config.baseline, 0).unwrap();
    let mut counts = CountTable::new(5, 2);
    let mut rng = stream_rng(6, 0);
    let mut last: Vec<Option<f64>> = vec![None; 10];
    let mut at_100: Vec<Option<f64>> = vec![None; 10];
    let mut worst_rise = 0.0f64;
    for _ in 0..5000 {
        for s in simulate_episode(&mdp, &pi, &mut rng, 50).steps {
            counts.record(s.state, s.action, s.next_state);
        }
        let conf = ConfidenceModel::from_counts(&mdp, &counts, 5000, 0.01).unwrap();
        for &x in mdp.taboo_states() {
            for a in 0..2 {
                let i = x * 2 + a;
                if counts.n_sa(x, a) <= 2 {
                    continue;
                }
                let e = conf.eps_hat[i];
                if let Some(prev) = last[i] {
                    worst_rise = worst_rise.max((e - prev) / prev);
                }
                if at_100[i].is_none() && counts.n_sa(x, a) >= 100 {
                    at_100[i] = Some(e);
                }
                last[i] = Some(e);
            }
        }
    }
    assert!(worst_rise < 1e-3, "{worst_rise}");
    for i in 0..6 {
        assert!(last[i].unwrap() < at_100[i].unwrap() / 2.0);
    }
}

#[test]
fn capped_episodes_still_update_counts() {
    let mdp = example_mdp();
    let mut config = example_config(50, 2);
    config.cap = Some(1);
    let log = run_learning(&mdp, &config).unwrap();
    assert!(log.cap_exceeded() > 0);
    assert_log_invariants(&mdp, &config, &log);
}

#[test]
fn identical_proxy_arms_give_identical_logs() {
    let mdp = example_mdp();
    let mut config = example_config(40, 9);
    config.baseline.proxy = Some(mdp.taboo_states().to_vec());
    let cmp = compare_proxy_knowledge(&mdp, &config).unwrap();
    assert_eq!(cmp.with_proxy, cmp.without_proxy);
}

#[test]
fn proxy_arms_differ_only_in_baseline_rows() {
    let mdp = example_mdp();
    let mut config = example_config(40, 9);
    config.p = 1.0;
    config.baseline = psafe::BaselineSpec::from_model(&mdp, 1.0, None).unwrap();
    let cmp = compare_proxy_knowledge(&mdp, &config).unwrap();
    let with = safe_baseline(&mdp, &config.baseline, 0).unwrap();
    let without = safe_baseline(&mdp, &config.baseline.without_proxy(), 0).unwrap();
    for (a, b) in cmp.with_proxy.records.iter().zip(&cmp.without_proxy.records) {
        if !a.feasible {
            assert_eq!(a.policy, with);
        }
        if !b.feasible {
            assert_eq!(b.policy, without);
        }
    }
    // only state 1 is outside the proxy set
    assert_eq!(with.row(1), without.row(1));
    assert_ne!(with.row(0), without.row(0));
}

#[test]
fn proxy_knowledge_lowers_regret_on_the_example() {
    let mdp = example_mdp();
    let cmp = compare_proxy_knowledge(&mdp, &example_config(500, 1)).unwrap();
    assert!(cmp.proxy_helps());
}
