mod common;

use common::*;
use frl_core::error::FactorKind;
use frl_core::estimation::{large_radius_audit, radius, width_of, width_sum_audit};
use frl_core::fmdp::{mixed_radix_index, mixed_radix_unindex, scope_project, FactoredMdp, FactoredVector, FlatIndex, Scope, DEFAULT_CAP};
use frl_core::harness::simulate_episode;
use frl_core::planner::Policy;
use frl_core::trajectory::scoped_visits;
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn radices() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..6, 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 256,
        failure_persistence: Some(Box::new(FileFailurePersistence::Off)),
        ..ProptestConfig::default()
    })]

    #[test]
    fn mixed_radix_is_a_bijection(r in radices()) {
        let total: usize = r.iter().product();
        let mut seen = vec![false; total];
        for i in 0..total {
            let coords = mixed_radix_unindex(i, &r).unwrap();
            prop_assert!(coords.iter().zip(&r).all(|(c, n)| c < n));
            prop_assert_eq!(mixed_radix_index(&coords, &r).unwrap(), i);
            seen[i] = true;
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert!(mixed_radix_unindex(total, &r).is_err());
    }

    #[test]
    fn projection_reads_the_named_coordinates(
        x in prop::collection::vec(0usize..10, 1..8),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..8),
    ) {
        let mut idx: Vec<usize> = picks.iter().map(|p| p.index(x.len())).collect();
        idx.sort();
        idx.dedup();
        let scope = Scope::new(idx.clone()).unwrap();
        let y = scope_project(&FactoredVector::new(x.clone()), &scope).unwrap();
        let expected: Vec<usize> = idx.iter().map(|&i| x[i]).collect();
        prop_assert_eq!(y.coords(), expected.as_slice());
    }

    #[test]
    fn json_round_trip_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_structure(&mut rng, 3, 4, 3, 3);
        let m = random_mdp(&mut rng, g);
        let back = FactoredMdp::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &m);
        let bits = |m: &FactoredMdp| m.transition_factors.iter().flatten().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn factored_l1_inequality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_structure(&mut rng, 4, 4, 2, 1);
        let p = random_mdp(&mut rng, g.clone());
        let q = random_mdp(&mut rng, g.clone());
        let x = FactoredVector::new(g.combined_factor_sizes.iter().map(|&n| rng.random_range(0..n)).collect());
        let (lhs, rhs) = factored_l1_sides(&p, &q, &x);
        prop_assert!(lhs <= rhs + 1e-9, "{} > {}", lhs, rhs);
    }

    #[test]
    fn width_is_capped_and_shrinks_with_data(d in 0.0f64..100.0, n in 0u64..1000, cap in 0.1f64..3.0) {
        let w = width_of(radius(d, n), cap);
        prop_assert!(w <= cap);
        prop_assert!(width_of(radius(d, n + 1), cap) <= w);
        if n == 0 {
            prop_assert_eq!(w, cap);
        }
    }

    #[test]
    fn logged_runs_satisfy_width_audits(seed in any::<u64>(), episodes in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let horizon = rng.random_range(1..=4);
        let g = random_structure(&mut rng, 3, 3, 2, horizon);
        let m = random_mdp(&mut rng, g);
        let index = FlatIndex::new(&m.structure, DEFAULT_CAP).unwrap();
        let (ns, na) = (index.num_states(), index.num_actions());
        let mut logs = Vec::new();
        for _ in 0..episodes {
            let actions = (0..ns * horizon).map(|_| rng.random_range(0..na)).collect();
            let policy = Policy::from_actions(ns, horizon, actions).unwrap();
            logs.push(simulate_episode(&m, &index, &policy, &mut rng).unwrap());
        }
        let d = rng.random::<f64>() * 50.0;
        for j in 0..m.structure.num_state_factors() {
            let visits = scoped_visits(&index, &logs, FactorKind::Transition, j);
            let domain = m.structure.transition_domain_size(j);
            let audit = width_sum_audit(&visits, d, domain, 2.0, horizon);
            prop_assert!(audit.holds(), "{:?}", audit);
            prop_assert_eq!(audit.steps, episodes * horizon);
            let eps = 0.05 + rng.random::<f64>();
            let (large, bound) = large_radius_audit(&visits, d, domain, horizon, eps);
            prop_assert!((large as f64) < bound);
        }
    }
}

#[test]
fn worked_factored_l1_instance() {
    use frl_core::fmdp::GraphStructure;
    let g = GraphStructure::new(
        vec![2, 2],
        vec![2, 2, 1],
        vec![Scope::new(vec![2]).unwrap()],
        vec![Scope::new(vec![2]).unwrap(), Scope::new(vec![2]).unwrap()],
        1,
        1.0,
        1.0,
    )
    .unwrap();
    let make = |a: Vec<f64>, b: Vec<f64>| FactoredMdp::new(g.clone(), vec![vec![0.5]], vec![vec![a], vec![b]], vec![0.25; 4]).unwrap();
    let p = make(vec![0.5, 0.5], vec![0.5, 0.5]);
    let q = make(vec![0.6, 0.4], vec![0.7, 0.3]);
    let (lhs, rhs) = factored_l1_sides(&p, &q, &FactoredVector::new(vec![0, 0, 0]));
    assert!((lhs - 0.40).abs() < 1e-12);
    assert!((rhs - 0.60).abs() < 1e-12);
}
