use proptest::prelude::*;
use psafe::fixtures::example_mdp;
use psafe::lp::{solve_lp, vertex_enumeration_oracle, LpProblem, LpStatus, FEAS_TOL};
use psafe::planner::build_exact_lp;
use psafe::random::random_lp;
use psafe::sim::stream_rng;

fn agree(lp: &LpProblem) {
    let simplex = solve_lp(lp).expect("simplex");
    let oracle = vertex_enumeration_oracle(lp).expect("oracle");
    assert_eq!(simplex.status, oracle.status, "status mismatch on\n{}", lp.dump());
    if simplex.status == LpStatus::Optimal {
        assert!(
            (simplex.objective_value - oracle.objective_value).abs() < 1e-6,
            "objective {} vs {} on\n{}",
            simplex.objective_value,
            oracle.objective_value,
            lp.dump()
        );
        assert!(lp.max_violation(&simplex.assignment).1 <= FEAS_TOL);
    }
}

#[test]
fn two_hundred_seeded_instances() {
    let mut rng = stream_rng(2024, 0);
    let mut statuses = [0usize; 3];
    for _ in 0..200 {
        let lp = random_lp(&mut rng);
        agree(&lp);
        statuses[solve_lp(&lp).unwrap().status as usize] += 1;
    }
    // the generator covers every outcome
    assert!(statuses.iter().all(|&c| c > 0), "{statuses:?}");
}

proptest! {
    #[test]
    fn simplex_matches_oracle(seed in any::<u64>()) {
        let lp = random_lp(&mut stream_rng(seed, 0));
        agree(&lp);
    }

    #[test]
    fn simplex_is_deterministic(seed in any::<u64>()) {
        let lp = random_lp(&mut stream_rng(seed, 1));
        let (a, b) = (solve_lp(&lp).unwrap(), solve_lp(&lp).unwrap());
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.iterations, b.iterations);
        prop_assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
        prop_assert_eq!(a.assignment, b.assignment);
    }
}

#[test]
fn example_planner_lp_matches_oracle() {
    let lp = build_exact_lp(&example_mdp(), 0, Some(0.5));
    let oracle = vertex_enumeration_oracle(&lp).unwrap();
    assert_eq!(oracle.status, LpStatus::Optimal);
    assert!((oracle.objective_value - 3.96875).abs() < 1e-6);
    assert!((solve_lp(&lp).unwrap().objective_value - oracle.objective_value).abs() < 1e-6);
}

#[test]
fn degenerate_extended_lp_terminates() {
    // every right-hand side is zero except one flow row
    let lp: LpProblem = serde_json::from_str(include_str!("fixtures/degenerate_lp.json")).unwrap();
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Infeasible);
}
