mod common;

use common::*;
use frl_core::estimation::{contains, ConfidenceFamily, FactorStats};
use frl_core::fmdp::{FactoredMdp, FlatIndex, GraphStructure, Scope, DEFAULT_CAP};
use frl_core::planner::{extended_value_iteration, optimistic_factor_reallocate, policy_value, value_iteration, InnerSolver, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn value_iteration_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..150 {
        let (ns, na) = small_dims(&mut rng);
        let tau = rng.random_range(1..=3);
        let m = random_tabular(&mut rng, ns, na, tau);
        let (v, policy) = value_iteration(&m);
        let oracle = enumerate_optimum(&m);
        for s in 0..ns {
            assert!((v.initial()[s] - oracle[s]).abs() <= 1e-12, "{} vs {}", v.initial()[s], oracle[s]);
        }
        let mine = evaluate_actions(&m, policy.actions());
        for s in 0..ns {
            assert!((mine[s] - oracle[s]).abs() <= 1e-12);
        }
    }
}

#[test]
fn optimal_values_dominate_random_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let m = random_tabular(&mut rng, 5, 3, 4);
        let (v, _) = value_iteration(&m);
        for _ in 0..50 {
            let actions = (0..5 * 4).map(|_| rng.random_range(0..3)).collect();
            let p = Policy::from_actions(5, 4, actions).unwrap();
            let vp = policy_value(&m, &p);
            for s in 0..5 {
                assert!(v.initial()[s] >= vp.initial()[s] - 1e-12);
            }
        }
    }
}

#[test]
fn policy_value_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = random_tabular(&mut rng, 3, 2, 3);
    let policy = Policy::from_actions(3, 3, vec![0, 1, 1, 1, 0, 1, 0, 0, 1]).unwrap();
    let v = policy_value(&m, &policy);
    let n = 100_000;
    for s0 in 0..3 {
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let mut s = s0;
            let mut total = 0.0;
            for h in 0..3 {
                let a = policy.action(s, h);
                total += m.reward(s, a);
                s = frl_core::fmdp::sample_categorical(m.row(s, a), &mut rng);
            }
            sum += total;
            sq += total * total;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - v.initial()[s0]).abs() <= 3.0 * se, "{mean} vs {}", v.initial()[s0]);
    }
}

#[test]
fn reallocate_stays_on_simplex_within_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..5000 {
        let n = rng.random_range(1..=6);
        let p_hat = random_row_in_ball(&mut rng, &vec![1.0 / n as f64; n], 2.0);
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let r = rng.random::<f64>() * 2.5;
        let p = optimistic_factor_reallocate(&p_hat, r, &v);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!(frl_core::estimation::l1(&p, &p_hat) <= r + 1e-12);
        // no other point of the ball does better
        let value = |q: &[f64]| q.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        for _ in 0..20 {
            let q = random_row_in_ball(&mut rng, &p_hat, r.min(2.0));
            assert!(value(&p) >= value(&q) - 1e-12);
        }
    }
}

fn single_factor_mdp() -> FactoredMdp {
    let g = GraphStructure::new(vec![2], vec![2, 2], vec![Scope::full(2)], vec![Scope::full(2)], 2, 1.0, 1.0).unwrap();
    FactoredMdp::new(
        g,
        vec![vec![0.1, 0.5, 0.9, 0.3]],
        vec![vec![vec![0.5, 0.5], vec![0.8, 0.2], vec![0.3, 0.7], vec![0.6, 0.4]]],
        vec![0.5, 0.5],
    )
    .unwrap()
}

fn family_around(m: &FactoredMdp, reward_radius: f64, transition_radius: f64) -> ConfidenceFamily {
    let g = &m.structure;
    let mut f = ConfidenceFamily::build(&FactorStats::new(g), g, 1, 0.1).unwrap();
    for (c, means) in f.reward.iter_mut().zip(&m.reward_factors) {
        c.means = means.clone();
        c.radii = vec![reward_radius; means.len()];
    }
    for (c, rows) in f.transition.iter_mut().zip(&m.transition_factors) {
        c.rows = rows.clone();
        c.radii = vec![transition_radius; rows.len()];
    }
    f
}

#[test]
fn zero_radii_reduce_to_value_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let g = random_structure(&mut rng, 3, 3, 2, 3);
        let m = random_mdp(&mut rng, g);
        let index = FlatIndex::new(&m.structure, DEFAULT_CAP).unwrap();
        let (v, policy) = value_iteration(&m.flatten(DEFAULT_CAP).unwrap());
        for solver in [InnerSolver::default(), InnerSolver::Exact] {
            let out = extended_value_iteration(&family_around(&m, 0.0, 0.0), &index, &m.initial_distribution, solver).unwrap();
            for i in 0..=m.structure.horizon {
                for (a, b) in out.values.step(i).iter().zip(v.step(i)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            assert_eq!(out.policy, policy);
            assert_eq!(out.model, m);
        }
    }
}

#[test]
fn unbounded_radii_give_maximal_optimism() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let g = random_structure(&mut rng, 3, 3, 2, 4);
    let m = random_mdp(&mut rng, g);
    let index = FlatIndex::new(&m.structure, DEFAULT_CAP).unwrap();
    let l = m.structure.num_reward_factors() as f64;
    for solver in [InnerSolver::default(), InnerSolver::Exact] {
        let out = extended_value_iteration(&family_around(&m, 1.0, 2.0), &index, &m.initial_distribution, solver).unwrap();
        for &v in out.values.initial() {
            assert!((v - 4.0 * l).abs() < 1e-12);
        }
    }
}

#[test]
fn single_factor_matches_grid_search() {
    let m = single_factor_mdp();
    let index = FlatIndex::new(&m.structure, DEFAULT_CAP).unwrap();
    let r = 0.3;
    let family = family_around(&m, 0.0, r);
    let out = extended_value_iteration(&family, &index, &m.initial_distribution, InnerSolver::default()).unwrap();
    // brute force: at each step and state, grid over the 1-D ball of each action
    let steps = 20_000;
    let mut next = vec![0.0, 0.0];
    for h in (0..2).rev() {
        let mut cur = vec![f64::NEG_INFINITY; 2];
        for s in 0..2 {
            for a in 0..2 {
                let pair = s * 2 + a;
                let p0 = m.transition_factors[0][pair][0];
                let mut best = f64::NEG_INFINITY;
                for k in 0..=steps {
                    let t = k as f64 / steps as f64;
                    if 2.0 * (t - p0).abs() <= r + 1e-12 {
                        best = best.max(t * next[0] + (1.0 - t) * next[1]);
                    }
                }
                cur[s] = cur[s].max(m.reward_factors[0][pair] + best);
            }
        }
        for s in 0..2 {
            assert!((out.values.step(h)[s] - cur[s]).abs() < 1e-6);
        }
        next = cur;
    }
}

#[test]
fn optimistic_values_dominate_family_members() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..60 {
        let g = random_structure(&mut rng, 3, 3, 2, 3);
        let center = random_mdp(&mut rng, g);
        let index = FlatIndex::new(&center.structure, DEFAULT_CAP).unwrap();
        let family = random_family(&mut rng, &center, 0.8);
        let rho = center.initial_distribution.clone();
        for solver in [InnerSolver::default(), InnerSolver::Exact] {
            let out = extended_value_iteration(&family, &index, &rho, solver).unwrap();
            assert_eq!(contains(&family, &out.model).unwrap(), None);
            for _ in 0..100 {
                let member = random_member(&mut rng, &family, &rho);
                assert_eq!(contains(&family, &member).unwrap(), None);
                let (v, _) = value_iteration(&member.flatten(DEFAULT_CAP).unwrap());
                for s in 0..index.num_states() {
                    assert!(out.values.initial()[s] >= v.initial()[s] - 1e-9);
                }
            }
        }
    }
}

fn enlarging_a_radius_never_lowers_values(solver: InnerSolver, max_state_factors: usize, cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..cases {
        let g = random_structure(&mut rng, max_state_factors, 3, 2, 3);
        let center = random_mdp(&mut rng, g);
        let index = FlatIndex::new(&center.structure, DEFAULT_CAP).unwrap();
        let family = random_family(&mut rng, &center, 0.8);
        let rho = &center.initial_distribution;
        let base = extended_value_iteration(&family, &index, rho, solver).unwrap();
        let mut bigger = family.clone();
        if rng.random_bool(0.5) {
            let j = rng.random_range(0..bigger.transition.len());
            let z = rng.random_range(0..bigger.transition[j].radii.len());
            bigger.transition[j].radii[z] += rng.random::<f64>();
        } else {
            let i = rng.random_range(0..bigger.reward.len());
            let z = rng.random_range(0..bigger.reward[i].radii.len());
            bigger.reward[i].radii[z] += rng.random::<f64>();
        }
        let grown = extended_value_iteration(&bigger, &index, rho, solver).unwrap();
        for h in 0..=center.structure.horizon {
            for (a, b) in grown.values.step(h).iter().zip(base.values.step(h)) {
                assert!(*a >= b - 1e-12, "{a} < {b}");
            }
        }
    }
}

#[test]
fn exact_inner_maximization_is_monotone() {
    enlarging_a_radius_never_lowers_values(InnerSolver::Exact, 3, 3000);
}

#[test]
fn coordinate_ascent_is_monotone_with_one_factor() {
    enlarging_a_radius_never_lowers_values(InnerSolver::default(), 1, 3000);
}

#[test]
fn exact_mode_rejects_wide_factors() {
    let g = GraphStructure::new(vec![9], vec![9, 1], vec![Scope::full(2)], vec![Scope::full(2)], 1, 1.0, 1.0).unwrap();
    let family = ConfidenceFamily::build(&FactorStats::new(&g), &g, 1, 0.1).unwrap();
    let index = FlatIndex::new(&g, DEFAULT_CAP).unwrap();
    assert!(extended_value_iteration(&family, &index, &[1.0 / 9.0; 9], InnerSolver::Exact).is_err());
    assert!(extended_value_iteration(&family, &index, &[1.0 / 9.0; 9], InnerSolver::default()).is_ok());
}
