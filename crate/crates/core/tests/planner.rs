use proptest::prelude::*;
use psafe::analysis::reachable_states;
use psafe::fixtures::example_mdp;
use psafe::learner::CountTable;
use psafe::planner::{solve_optimistic_policy, ConfidenceModel, OptimisticSolve};
use psafe::random::{random_mdp, MdpShape};
use psafe::sim::{simulate_episode, stream_rng};
use psafe::*;

/// Counts from `episodes` uniform-play episodes of `mdp` from `x0`.
fn uniform_counts(mdp: &Mdp, x0: usize, episodes: usize, seed: u64) -> CountTable {
    let pi = Policy::uniform(mdp, x0);
    let mut counts = CountTable::new(mdp.n_states(), mdp.n_actions());
    let mut rng = stream_rng(seed, 0);
    for _ in 0..episodes {
        for s in simulate_episode(mdp, &pi, &mut rng, 10_000).steps {
            counts.record(s.state, s.action, s.next_state);
        }
    }
    counts
}

fn optimistic(mdp: &Mdp, conf: &ConfidenceModel, x0: usize, p: f64) -> OptimisticSolve {
    solve_optimistic_policy(conf, mdp.rewards(), x0, p, &Policy::uniform(mdp, x0)).unwrap()
}

#[test]
fn example_optimum_rows_and_values() {
    let mdp = example_mdp();
    let plan = exact_safe_lp(&mdp, 0, 0.5).unwrap();
    let pi = &plan.policy;
    assert!((plan.objective - 3.96875).abs() < 1e-6);
    assert!((pi.prob(0, 0) - 0.4609375).abs() < 1e-6);
    assert!((pi.prob(0, 1) - 0.5390625).abs() < 1e-6);
    assert!((pi.prob(1, 1) - 1.0).abs() < 1e-6);
    assert!((pi.prob(2, 0) - 1.0).abs() < 1e-6);
    let j = value_function(&mdp, pi).unwrap();
    assert!((j.at(0) - 3.96875).abs() < 1e-9);
    assert!((j.at(2) - 4.0).abs() < 1e-9);
    let check = is_p_safe(&mdp, pi, 0.5).unwrap();
    assert!(check.safe && check.margin.abs() < 1e-9);
    assert!(plan.occupancy.flow_residual(&mdp, 0) < 1e-7);
}

#[test]
fn tiny_budget_gives_all_safe_value() {
    // action 2 everywhere never reaches U
    let mdp = example_mdp();
    let plan = exact_safe_lp(&mdp, 0, 0.0001).unwrap();
    let safe = Policy::deterministic(&mdp, 0, 1);
    let j_safe = value_function(&mdp, &safe).unwrap().at(0);
    assert!(plan.objective >= j_safe - 1e-9);
    assert!(safety_function(&mdp, &plan.policy).unwrap().at(0) <= 0.0001 + 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_plans_are_safe_and_consistent(seed in any::<u64>(), p in 0.01f64..0.99) {
        let mut rng = stream_rng(seed, 0);
        let mdp = random_mdp(&mut rng, MdpShape::default());
        let x0 = mdp.taboo_states()[0];
        let plan = exact_safe_lp(&mdp, x0, p).unwrap();
        prop_assert!(plan.occupancy.flow_residual(&mdp, x0) < 1e-7);
        prop_assert!(safety_function(&mdp, &plan.policy).unwrap().at(x0) <= p + 1e-7);
        let j = value_function(&mdp, &plan.policy).unwrap().at(x0);
        prop_assert!((j - plan.objective).abs() < 1e-6, "{j} vs {}", plan.objective);
        // no p-safe policy beats the plan; the all-safe one is among them
        let safe = psafe::planner::planner_fallback(&mdp, x0);
        if safety_function(&mdp, &safe).unwrap().at(x0) <= p {
            prop_assert!(value_function(&mdp, &safe).unwrap().at(x0) <= plan.objective + 1e-6);
        }
    }

    #[test]
    fn zero_budget_plans_never_reach_forbidden_states(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let mdp = random_mdp(&mut rng, MdpShape::default());
        let x0 = mdp.taboo_states()[0];
        let plan = exact_safe_lp(&mdp, x0, 0.0).unwrap();
        let reached = reachable_states(&mdp, &plan.policy);
        prop_assert!(reached.iter().all(|&x| mdp.kind(x) != StateKind::Forbidden));
    }
}

#[test]
fn tightened_lp_is_safe_when_truth_is_covered() {
    let mdp = example_mdp();
    let mut feasible = 0;
    for (i, episodes) in [5_000, 20_000, 50_000, 200_000].into_iter().enumerate() {
        let counts = uniform_counts(&mdp, 0, episodes, i as u64);
        for w in [0.01, 0.1, 0.5] {
            let conf = ConfidenceModel::from_counts(&mdp, &counts, 5000, w).unwrap();
            let sol = optimistic(&mdp, &conf, 0, 0.5);
            if sol.feasible && conf.contains(&mdp) {
                feasible += 1;
                let s = safety_function(&mdp, &sol.policy).unwrap().at(0);
                assert!(s <= 0.5, "S = {s} with {episodes} episodes, w = {w}");
            }
        }
    }
    assert!(feasible >= 6);
}

#[test]
fn tightened_lp_is_safe_on_random_models() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let mut rng = stream_rng(seed, 99);
        let mdp = random_mdp(&mut rng, MdpShape::default());
        let x0 = mdp.taboo_states()[0];
        let counts = uniform_counts(&mdp, x0, 30_000, seed);
        let conf = ConfidenceModel::from_counts(&mdp, &counts, 1000, 0.05).unwrap();
        let sol = optimistic(&mdp, &conf, x0, 0.3);
        if sol.feasible && conf.contains(&mdp) {
            checked += 1;
            assert!(safety_function(&mdp, &sol.policy).unwrap().at(x0) <= 0.3);
        }
    }
    assert!(checked > 0);
}

#[test]
fn wider_radii_never_help_on_the_example() {
    let mdp = example_mdp();
    for (i, episodes) in [2_000, 10_000, 20_000, 50_000, 200_000].into_iter().enumerate() {
        let counts = uniform_counts(&mdp, 0, episodes, 100 + i as u64);
        for w in [0.01, 0.5] {
            let conf = ConfidenceModel::from_counts(&mdp, &counts, 5000, w).unwrap();
            let narrow = optimistic(&mdp, &conf, 0, 0.5);
            let wide = optimistic(&mdp, &conf.scale_radii(2.0), 0, 0.5);
            if !narrow.feasible {
                assert!(!wide.feasible);
            } else if let (Some(a), Some(b)) = (narrow.objective, wide.objective) {
                assert!(b <= a + 1e-9, "{b} > {a}");
            }
        }
    }
}

#[test]
fn converged_estimate_recovers_the_optimum() {
    let mdp = example_mdp();
    let conf = ConfidenceModel::exact(&mdp);
    let sol = optimistic(&mdp, &conf, 0, 0.5);
    let plan = exact_safe_lp(&mdp, 0, 0.5).unwrap();
    assert!(sol.policy.max_abs_diff(&plan.policy, &mdp) < 1e-3);
    let occ = sol.occupancy.unwrap();
    // β / γ reproduces the kernel wherever γ > 0
    for &x in mdp.taboo_states() {
        for a in 0..2 {
            if let Some(row) = occ.implied_kernel(x, a) {
                for (y, &v) in row.iter().enumerate() {
                    assert!((v - mdp.prob(x, a, y)).abs() < 1e-9);
                }
            }
        }
    }
}
