mod common;

use common::*;
use frl_core::agents::{psrl_sample_mdp, restore_agent, Agent, FactoredPosterior, PriorConfig, PsrlAgent, UcrlAgent};
use frl_core::estimation::contains;
use frl_core::fmdp::{FlatIndex, DEFAULT_CAP};
use frl_core::harness::env::draw_from_prior;
use frl_core::harness::{simulate_episode, stream_rng, symmetric_structure, Stream};
use frl_core::planner::{policy_value, value_iteration};
use frl_core::{AgentConfig, Algorithm, SimRng};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

fn prior() -> PriorConfig {
    PriorConfig::default()
}

#[test]
fn pre_data_samples_follow_the_prior() {
    let g = symmetric_structure(2, 3, 1, 2).unwrap();
    let posterior = FactoredPosterior::new(g.clone(), &prior(), vec![1.0 / 9.0; 9]).unwrap();
    let mut rng = SimRng::seed_from_u64(3);
    let n = 10_000;
    let (mut p0, mut r0, mut env_p0) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let m = psrl_sample_mdp(&posterior, &mut rng);
        p0.push(m.transition_factors[0][1][0]);
        r0.push(m.reward_factors[0][2]);
        let env = draw_from_prior(g.clone(), &prior(), DEFAULT_CAP, &mut rng).unwrap();
        env_p0.push(env.transition_factors[0][1][0]);
    }
    // first coordinate of a flat Dirichlet over 3 outcomes is Beta(1, 2)
    let beta: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>().sqrt()).collect();
    let normal = Normal::new(0.5f64, 1.0).unwrap();
    let clipped: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng).clamp(0.0, 1.0)).collect();
    let crit = ks_critical_001(n, n);
    assert!(ks_statistic(&p0, &beta) < crit);
    assert!(ks_statistic(&r0, &clipped) < crit);
    assert!(ks_statistic(&p0, &env_p0) < crit);
    // and a shifted sample is rejected
    let shifted: Vec<f64> = beta.iter().map(|x| (x + 0.05).min(1.0)).collect();
    assert!(ks_statistic(&p0, &shifted) > crit);
}

#[test]
fn posterior_counts_match_the_log() {
    let mut rng = SimRng::seed_from_u64(4);
    let g = random_structure(&mut rng, 3, 3, 2, 3);
    let env = random_mdp(&mut rng, g.clone());
    let index = FlatIndex::new(&g, DEFAULT_CAP).unwrap();
    let config = AgentConfig::new(Algorithm::Psrl);
    let mut agent = PsrlAgent::new(config, &g, &env.initial_distribution, DEFAULT_CAP).unwrap();
    let mut counts: Vec<Vec<Vec<f64>>> = (0..g.num_state_factors())
        .map(|j| vec![vec![0.0; g.state_factor_sizes[j]]; g.transition_domain_size(j)])
        .collect();
    let mut reward_n = vec![vec![0u64; g.reward_domain_size(0)]; 1];
    let mut reward_sum = vec![0.0; g.reward_domain_size(0)];
    for k in 1..=40 {
        let plan = agent.plan(k, &mut rng).unwrap();
        let log = simulate_episode(&env, &index, &plan.policy, &mut rng).unwrap();
        for st in &log.steps {
            let x = index.point(st.state, st.action).unwrap();
            let next = index.state_coords(st.next_state).to_vec();
            for j in 0..g.num_state_factors() {
                let z = g.row_of(&x, &g.transition_scopes[j]).unwrap();
                counts[j][z][next[j]] += 1.0;
            }
            let z = g.row_of(&x, &g.reward_scopes[0]).unwrap();
            reward_n[0][z] += 1;
            reward_sum[z] += st.rewards[0];
        }
        agent.observe(&log);
    }
    let post = agent.posterior();
    for (j, rows) in counts.iter().enumerate() {
        for (z, row) in rows.iter().enumerate() {
            let expected: Vec<f64> = row.iter().map(|c| c + 1.0).collect();
            assert_eq!(post.dirichlet(j, z), expected);
        }
    }
    for z in 0..reward_sum.len() {
        let (mean, var) = post.reward_posterior(0, z);
        let n = reward_n[0][z] as f64;
        let precision = 1.0 + n;
        assert!((var - 1.0 / precision).abs() < 1e-12);
        assert!((mean - (0.5 + reward_sum[z]) / precision).abs() < 1e-9);
    }
}

#[test]
fn optimism_holds_whenever_the_truth_is_plausible() {
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut rng = SimRng::seed_from_u64(seed);
        let g = random_structure(&mut rng, 2, 3, 2, 3);
        let env = random_mdp(&mut rng, g.clone());
        let index = FlatIndex::new(&g, DEFAULT_CAP).unwrap();
        let tab = env.flatten_with(&index).unwrap();
        let v_star = value_iteration(&tab).0.expected_initial(&env.initial_distribution);
        let mut agent = UcrlAgent::new(AgentConfig::new(Algorithm::UcrlFactored), &g, &env.initial_distribution, DEFAULT_CAP).unwrap();
        for k in 1..=60 {
            let plan = agent.plan(k, &mut rng).unwrap();
            if contains(plan.family.as_ref().unwrap(), &env).unwrap().is_none() {
                checked += 1;
                assert!(plan.model_value.unwrap() >= v_star - 1e-9);
            }
            let log = simulate_episode(&env, &index, &plan.policy, &mut rng).unwrap();
            agent.observe(&log);
        }
    }
    assert!(checked > 100);
}

#[test]
fn psrl_regret_is_nonnegative_and_plans_are_valid() {
    let mut rng = SimRng::seed_from_u64(6);
    let g = symmetric_structure(2, 2, 1, 3).unwrap();
    let env = draw_from_prior(g.clone(), &prior(), DEFAULT_CAP, &mut rng).unwrap();
    let index = FlatIndex::new(&g, DEFAULT_CAP).unwrap();
    let tab = env.flatten_with(&index).unwrap();
    let v_star = value_iteration(&tab).0;
    let mut agent = PsrlAgent::new(AgentConfig::new(Algorithm::Psrl), &g, &env.initial_distribution, DEFAULT_CAP).unwrap();
    for k in 1..=30 {
        let plan = agent.plan(k, &mut rng).unwrap();
        let v = policy_value(&tab, &plan.policy);
        for s in 0..index.num_states() {
            assert!(v.initial()[s] <= v_star.initial()[s] + 1e-12);
        }
        agent.observe(&simulate_episode(&env, &index, &plan.policy, &mut rng).unwrap());
    }
}

fn trace(algorithm: Algorithm, seed: u64) -> Vec<Vec<usize>> {
    let g = symmetric_structure(2, 2, 1, 3).unwrap();
    let env = random_mdp(&mut stream_rng(seed, Stream::Environment), g.clone());
    let index = FlatIndex::new(&g, DEFAULT_CAP).unwrap();
    let mut agent_rng = stream_rng(seed, Stream::Agent);
    let mut sim_rng = stream_rng(seed, Stream::Simulation);
    let mut agent = frl_core::agents::build_agent(
        &AgentConfig::new(algorithm),
        &env,
        DEFAULT_CAP,
        &value_iteration(&env.flatten(DEFAULT_CAP).unwrap()).1,
    )
    .unwrap();
    (1..=25)
        .map(|k| {
            let plan = agent.plan(k, &mut agent_rng).unwrap();
            agent.observe(&simulate_episode(&env, &index, &plan.policy, &mut sim_rng).unwrap());
            plan.policy.actions().to_vec()
        })
        .collect()
}

#[test]
fn agents_are_deterministic_given_the_seed() {
    for algorithm in [Algorithm::Psrl, Algorithm::UcrlFactored, Algorithm::PsrlFlat, Algorithm::UniformRandom] {
        assert_eq!(trace(algorithm, 9), trace(algorithm, 9));
    }
    assert_ne!(trace(Algorithm::Psrl, 9), trace(Algorithm::Psrl, 10));
}

#[test]
fn checkpoint_restores_the_same_behaviour() {
    let mut rng = SimRng::seed_from_u64(12);
    let g = symmetric_structure(2, 2, 1, 3).unwrap();
    let env = random_mdp(&mut rng, g.clone());
    let index = FlatIndex::new(&g, DEFAULT_CAP).unwrap();
    for algorithm in [Algorithm::Psrl, Algorithm::UcrlFactored, Algorithm::UcrlFlat] {
        let mut agent = frl_core::agents::build_agent(&AgentConfig::new(algorithm), &env, DEFAULT_CAP, &value_iteration(&env.flatten(DEFAULT_CAP).unwrap()).1).unwrap();
        for k in 1..=10 {
            let plan = agent.plan(k, &mut rng).unwrap();
            agent.observe(&simulate_episode(&env, &index, &plan.policy, &mut rng).unwrap());
        }
        let snap = agent.snapshot().unwrap();
        let json = snap.to_json().unwrap();
        let mut restored = restore_agent(&frl_core::agents::AgentSnapshot::from_json(&json).unwrap(), DEFAULT_CAP).unwrap();
        assert_eq!(restored.snapshot().unwrap(), snap);
        let mut a = SimRng::seed_from_u64(99);
        let mut b = SimRng::seed_from_u64(99);
        assert_eq!(agent.plan(11, &mut a).unwrap().policy, restored.plan(11, &mut b).unwrap().policy);
    }
}
