use proptest::prelude::*;
use psafe::analysis::{safety_residual, McEstimate};
use psafe::baseline::{safe_baseline, BaselineSpec};
use psafe::fixtures::example_mdp;
use psafe::random::{random_mdp, random_policy, MdpShape};
use psafe::sim::stream_rng;
use psafe::*;

fn optimal_policy(mdp: &Mdp) -> Policy {
    exact_safe_lp(mdp, 0, 0.5).unwrap().policy
}

fn value_residual(mdp: &Mdp, policy: &Policy, j: &ValueVector) -> f64 {
    mdp.taboo_states()
        .iter()
        .map(|&x| {
            let rhs: f64 = (0..mdp.n_actions())
                .map(|a| {
                    let cont: f64 =
                        mdp.taboo_states().iter().map(|&y| mdp.prob(x, a, y) * j.at(y)).sum();
                    policy.prob(x, a) * (mdp.reward(x, a) + cont)
                })
                .sum();
            (j.at(x) - rhs).abs()
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn recursion_residuals_vanish(seed in any::<u64>(), acyclic in any::<bool>()) {
        let mut rng = stream_rng(seed, 0);
        let mdp = random_mdp(&mut rng, MdpShape { acyclic, ..Default::default() });
        let pi = random_policy(&mut rng, &mdp, mdp.taboo_states()[0]);
        let s = safety_function(&mdp, &pi).unwrap();
        prop_assert!(safety_residual(&mdp, &pi, &s) < 1e-9);
        prop_assert!(s.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let j = value_function(&mdp, &pi).unwrap();
        prop_assert!(value_residual(&mdp, &pi, &j) < 1e-9);
    }

    #[test]
    fn proxy_states_dominate_in_max_form(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let mdp = random_mdp(&mut rng, MdpShape::default());
        let pi = random_policy(&mut rng, &mdp, mdp.taboo_states()[0]);
        let s = safety_function(&mdp, &pi).unwrap();
        let proxy = mdp.proxy().unwrap();
        let inside = proxy.iter().map(|&x| s.at(x)).fold(0.0, f64::max);
        let outside = mdp
            .taboo_states()
            .iter()
            .filter(|x| !proxy.contains(x))
            .map(|&x| s.at(x))
            .fold(0.0, f64::max);
        prop_assert!(outside <= inside + 1e-12, "{outside} > {inside}");
    }

    #[test]
    fn pitfall_is_monotone(b in 0.001f64..0.999, db in 0.0f64..0.5, t in 0u64..500, dt in 0u64..500) {
        let b2 = (b + db).min(0.999);
        let base = fixed_horizon_pitfall(b, Horizon::Steps(t)).unwrap();
        prop_assert!(base <= fixed_horizon_pitfall(b, Horizon::Steps(t + dt)).unwrap());
        prop_assert!(base <= fixed_horizon_pitfall(b2, Horizon::Steps(t)).unwrap());
        prop_assert!(base <= fixed_horizon_pitfall(b, Horizon::Infinite).unwrap());
    }
}

#[test]
fn zero_reward_models_have_zero_value() {
    let mut rng = stream_rng(5, 0);
    let mdp = random_mdp(&mut rng, MdpShape::default());
    let mut file = mdp.to_model_file();
    file.rewards.clear();
    let mdp = validate_mdp(&file).unwrap();
    let pi = random_policy(&mut rng, &mdp, mdp.taboo_states()[0]);
    assert!(value_function(&mdp, &pi).unwrap().values().iter().all(|&v| v == 0.0));
}

#[test]
fn monte_carlo_matches_optimal_policy() {
    let mdp = example_mdp();
    let pi = optimal_policy(&mdp);
    let exact = safety_function(&mdp, &pi).unwrap().at(0);
    assert!((exact - 0.5).abs() < 1e-9);
    let mc = monte_carlo_safety(&mdp, &pi, 100_000, 11).unwrap();
    assert!(mc.agrees_with(exact, 3.0), "{mc:?}");
    assert!(mc.lower <= exact && exact <= mc.upper);
    assert_eq!(mc.cap_exceeded, 0);
}

#[test]
fn monte_carlo_matches_baseline() {
    let mdp = example_mdp();
    let spec = BaselineSpec::from_model(&mdp, 0.5, Some(0.9)).unwrap();
    let pi = safe_baseline(&mdp, &spec, 0).unwrap();
    let mc = monte_carlo_safety(&mdp, &pi, 100_000, 12).unwrap();
    assert!(mc.agrees_with(0.0872, 3.0), "{mc:?}");
}

#[test]
fn monte_carlo_of_a_safe_policy_is_zero() {
    let mdp = example_mdp();
    let pi = Policy::deterministic(&mdp, 0, 1);
    let mc: McEstimate = monte_carlo_safety(&mdp, &pi, 1000, 1).unwrap();
    assert_eq!(mc.hits, 0);
    assert_eq!(mc.estimate, 0.0);
    assert_eq!(mc.lower, 0.0);
    assert!(mc.upper > 0.0 && mc.upper < 0.01);
}

#[test]
fn monte_carlo_is_thread_count_independent() {
    let mdp = example_mdp();
    let pi = optimal_policy(&mdp);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| monte_carlo_safety(&mdp, &pi, 5000, 3).unwrap());
    assert_eq!(single, monte_carlo_safety(&mdp, &pi, 5000, 3).unwrap());
}

#[test]
fn monte_carlo_coverage() {
    // 3σ band should hold in at least 99% of seeded trials
    let mdp = example_mdp();
    let spec = BaselineSpec::from_model(&mdp, 0.5, None).unwrap();
    let pi = safe_baseline(&mdp, &spec, 0).unwrap();
    let covered = (0..200u64)
        .filter(|&seed| monte_carlo_safety(&mdp, &pi, 2000, seed).unwrap().agrees_with(0.0872, 3.0))
        .count();
    assert!(covered >= 198, "{covered}/200");
}

#[test]
fn monte_carlo_error_shrinks() {
    let mdp = example_mdp();
    let pi = optimal_policy(&mdp);
    let err = |n| (monte_carlo_safety(&mdp, &pi, n, 8).unwrap().estimate - 0.5f64).abs();
    let widths: Vec<f64> = [1_000, 100_000]
        .iter()
        .map(|&n| monte_carlo_safety(&mdp, &pi, n, 8).unwrap())
        .map(|mc| mc.upper - mc.lower)
        .collect();
    assert!(widths[1] < widths[0] / 5.0);
    assert!(err(100_000) < 3.0 * (0.25f64 / 100_000.0).sqrt());
}
