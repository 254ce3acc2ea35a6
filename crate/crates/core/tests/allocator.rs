//! Dual solvers against the enumeration oracle, plus structural properties.

mod common;

use common::*;
use promo_core::allocator::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn single_budget_matches_lp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = SolveOptions::default();
    for case in 0..50 {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(2..=5);
        let m = random_matrix(&mut rng, n, d, 1, case % 2 == 0);
        let b = random_budget(&mut rng, &m, 0);
        let exact = solve_exact_small(&m, &[b]).unwrap();
        let (dual, plan) = solve_dual_single(&m, b, &opts).unwrap();
        assert!(plan.spend[0] <= b + 1e-9 * b.max(1.0), "case {case}: spend {} > {b}", plan.spend[0]);
        assert!(
            rel_gap(plan.objective, exact.lp_objective) < 1e-6,
            "case {case}: dual {} vs lp {}",
            plan.objective,
            exact.lp_objective
        );
        assert!(plan.objective <= exact.lp_objective + 1e-12);
        assert!(plan.boundary_users() <= 1);
        assert!(dual.lambda[0] >= 0.0);
        plan.validate(d).unwrap();
    }
}

#[test]
fn two_budgets_match_lp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = SolveOptions::default();
    for case in 0..30 {
        let n = rng.gen_range(1..=6);
        let d = rng.gen_range(2..=4);
        let m = random_matrix(&mut rng, n, d, 2, case % 2 == 0);
        let budgets = [random_budget(&mut rng, &m, 0), random_budget(&mut rng, &m, 1)];
        let exact = match solve_exact_small(&m, &budgets) {
            Ok(e) => e,
            Err(_) => continue,
        };
        let (_, plan) = solve_dual_multi(&m, &budgets, &opts).unwrap();
        for k in 0..2 {
            assert!(plan.spend[k] <= budgets[k] + 1e-9 * budgets[k].max(1.0), "case {case}");
        }
        assert!(
            rel_gap(plan.objective, exact.lp_objective) < 1e-3,
            "case {case}: nested {} vs lp {}",
            plan.objective,
            exact.lp_objective
        );
        plan.validate(d).unwrap();
    }
}

#[test]
fn subgradient_returns_feasible_plans() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = SolveOptions {
        multi: MultiMethod::Subgradient {
            iterations: 5000,
            eta0: None,
        },
        ..Default::default()
    };
    for _ in 0..10 {
        let m = random_matrix(&mut rng, 6, 4, 2, true);
        let budgets = [random_budget(&mut rng, &m, 0), random_budget(&mut rng, &m, 1)];
        match solve_dual_multi(&m, &budgets, &opts) {
            Ok((_, plan)) => {
                for k in 0..2 {
                    assert!(plan.spend[k] <= budgets[k] + 1e-9 * budgets[k].max(1.0));
                }
            }
            Err(e) => assert!(matches!(e, promo_core::Error::NoFeasiblePlan { .. }), "{e}"),
        }
    }
}

#[test]
fn one_kind_multi_agrees_with_single() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = SolveOptions::default();
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 50, 6, 1, true);
        let b = random_budget(&mut rng, &m, 0);
        let (_, a) = solve_dual_single(&m, b, &opts).unwrap();
        let (_, c) = solve_dual_multi(&m, &[b], &opts).unwrap();
        assert!(rel_gap(a.objective, c.objective) < 1e-9);
    }
}

#[test]
fn non_binding_extra_budget_is_priced_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = SolveOptions::default();
    for _ in 0..10 {
        let m = random_matrix(&mut rng, 30, 5, 2, true);
        let b = random_budget(&mut rng, &m, 0);
        let (dual, plan) = solve_dual_multi(&m, &[b, 1e9], &opts).unwrap();
        assert_eq!(dual.lambda[1], 0.0);
        let single = ResponseMatrix::new(m.grid().clone(), m.users(), m.f().to_vec(), vec![m.g(0).to_vec()]).unwrap();
        let (_, reference) = solve_dual_single(&single, b, &opts).unwrap();
        assert_eq!(plan.assignment, reference.assignment);
    }
}

#[test]
fn budget_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = SolveOptions::default();
    let m = random_matrix(&mut rng, 20, 5, 1, true);
    let free = assign_given_lambda(&m, &[0.0]).unwrap();
    let (dual, plan) = solve_dual_single(&m, free.spend[0] + 1.0, &opts).unwrap();
    assert_eq!(dual.lambda, vec![0.0]);
    assert_eq!(plan.assignment, free.assignment);

    let (_, plan) = solve_dual_single(&m, min_spend(&m, 0), &opts).unwrap();
    assert!(plan.assignment.iter().all(|a| *a == Assignment::single(0)));

    let err = solve_dual_single(&m, -1.0, &opts).unwrap_err();
    match err {
        promo_core::Error::Infeasible { min_spend, .. } => assert_eq!(min_spend, 0.0),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn per_capita_matches_total_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let opts = SolveOptions::default();
    for _ in 0..10 {
        let m = random_matrix(&mut rng, 40, 6, 1, true);
        let b = random_budget(&mut rng, &m, 0);
        let (_, total) = solve_dual_single(&m, b, &opts).unwrap();
        let per = total.spend[0] / m.users() as f64;
        let (dual, plan) = solve_per_capita(&m, &[per], &opts).unwrap();
        assert!(rel_gap(plan.objective, total.objective) < 1e-6);
        assert!(plan.spend[0] <= dual.budgets[0] + 1e-9 * dual.budgets[0].max(1.0));
    }
    let m = random_matrix(&mut rng, 10, 4, 1, true);
    let (dual, _) = solve_per_capita(&m, &[1e6], &opts).unwrap();
    assert_eq!(dual.lambda, vec![0.0]);
}

#[test]
fn cohort_solution_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = random_matrix(&mut rng, 200, 11, 1, true);
    let b = random_budget(&mut rng, &m, 0);
    let a = solve_dual_single(&m, b, &SolveOptions::default()).unwrap();
    let c = solve_dual_single(&m, b, &SolveOptions::default()).unwrap();
    assert_eq!(a, c);
}

#[test]
fn sampling_converges_to_expected_spend() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = random_matrix(&mut rng, 30, 5, 1, true);
    // Force several boundary users by mixing two pure plans.
    let lo = assign_given_lambda(&m, &[0.0]).unwrap();
    let hi = assign_given_lambda(&m, &[1e9]).unwrap();
    let mixed: Vec<Assignment> = lo
        .assignment
        .iter()
        .zip(&hi.assignment)
        .map(|(a, b)| Assignment::blend(a, b, 0.3))
        .collect();
    let plan = AllocationPlan::from_assignment(&m, mixed, vec![0.0]);
    let var: f64 = plan
        .assignment
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let row = m.g_row(0, i);
            let mean = a.expect(row);
            a.support().iter().map(|&(l, p)| p * (row[l] - mean).powi(2)).sum::<f64>()
        })
        .sum();
    let draws = 10_000;
    let mean: f64 = (0..draws)
        .map(|s| sample_plan(&plan, &m, s).unwrap().realized_spend[0])
        .sum::<f64>()
        / draws as f64;
    let sigma = (var / draws as f64).sqrt();
    assert!((mean - plan.spend[0]).abs() <= 3.0 * sigma, "{mean} vs {} (sigma {sigma})", plan.spend[0]);

    let deterministic = assign_given_lambda(&m, &[0.01]).unwrap();
    let a = sample_plan(&deterministic, &m, 1).unwrap();
    let b = sample_plan(&deterministic, &m, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.realized_spend, deterministic.spend);
}

#[test]
fn plan_and_dual_files_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = random_matrix(&mut rng, 25, 5, 1, true);
    let b = random_budget(&mut rng, &m, 0);
    let (dual, plan) = solve_dual_single(&m, b, &SolveOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_plan(&mut buf, &plan, &m).unwrap();
    assert_eq!(read_plan(&buf[..]).unwrap(), plan);
    let mut buf = Vec::new();
    write_dual(&mut buf, &dual).unwrap();
    assert_eq!(read_dual(&buf[..]).unwrap(), dual);
}

fn matrix_strategy() -> impl Strategy<Value = (ResponseMatrix, Vec<f64>)> {
    (1usize..20, 2usize..8, any::<u64>()).prop_map(|(n, d, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, n, d, 1, seed % 2 == 0);
        let mut ladder: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..0.2)).collect();
        ladder.sort_by(f64::total_cmp);
        (m, ladder)
    })
}

proptest! {
    #[test]
    fn spend_is_nonincreasing_in_lambda((m, ladder) in matrix_strategy()) {
        let spends: Vec<f64> = ladder.iter().map(|&l| assign_given_lambda(&m, &[l]).unwrap().spend[0]).collect();
        for w in spends.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn argmax_is_scale_invariant((m, ladder) in matrix_strategy(), scale in 0.1f64..10.0) {
        let scaled_f: Vec<f64> = m.f().iter().map(|v| v * scale / 10.0).collect();
        let scaled = ResponseMatrix::new(m.grid().clone(), m.users(), scaled_f, vec![m.g(0).to_vec()]).unwrap();
        let shrink: Vec<f64> = m.f().iter().map(|v| v / 10.0).collect();
        let base = ResponseMatrix::new(m.grid().clone(), m.users(), shrink, vec![m.g(0).to_vec()]).unwrap();
        for &l in &ladder {
            let a = assign_given_lambda(&base, &[l / 10.0]).unwrap();
            let b = assign_given_lambda(&scaled, &[l * scale / 10.0]).unwrap();
            prop_assert_eq!(a.assignment, b.assignment);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_plans_never_beat_the_lp((n, d, seed) in (1usize..=6, 2usize..=5, any::<u64>()), frac in 0.0f64..1.0) {
        let m = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed), n, d, 1, seed % 2 == 0);
        let b = min_spend(&m, 0) + frac * (free_spend(&m, 0) - min_spend(&m, 0));
        let exact = solve_exact_small(&m, &[b]).unwrap();
        let (_, plan) = solve_dual_single(&m, b, &SolveOptions::default()).unwrap();
        prop_assert!(plan.objective <= exact.lp_objective + 1e-12);
        prop_assert!(plan.spend[0] <= b + 1e-9 * b.abs().max(1.0));
        if let Some(ilp) = exact.ilp_objective {
            prop_assert!(ilp <= exact.lp_objective + 1e-12);
        }
    }
}

#[test]
fn stored_dual_policy_reproduces_spend_on_its_cohort() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let opts = SolveOptions::default();
    for _ in 0..20 {
        let n = rng.gen_range(2..=8);
        let d = rng.gen_range(2..=5);
        let m = random_matrix(&mut rng, n, d, 1, true);
        let b = random_budget(&mut rng, &m, 0);
        let (dual, plan) = solve_dual_single(&m, b, &opts).unwrap();
        let again = assign_given_dual(&m, &dual).unwrap();
        assert!((again.spend[0] - plan.spend[0]).abs() <= 1e-9 * b.max(1.0), "{} vs {}", again.spend[0], plan.spend[0]);
        assert!((again.objective - plan.objective).abs() <= 1e-9 * plan.objective.abs().max(1.0));
    }
}
