//! The episodic simulation loop and exact regret accounting.

use std::time::Instant;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::agents::build_agent;
use crate::bounds::{corollary_psrl, corollary_ucrl, diameter, optimal_span, psrl_regret_bound, ucrl_regret_bound, BoundInputs};
use crate::config::{EnvironmentSpec, ExperimentConfig};
use crate::error::{FrlError, Result};
use crate::fmdp::{sample_categorical, FactoredMdp, FlatIndex, TabularMdp};
use crate::harness::audit::width_sums;
use crate::harness::env::build_environment;
use crate::par::{self, Execution};
use crate::planner::{policy_value, value_iteration, Policy, ValueTable};
use crate::trajectory::{EpisodeLog, Step};
use crate::SimRng;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Environment = 0,
    Simulation = 1,
    Agent = 2,
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub k: usize,
    pub delta_k: f64,
    pub cum_regret: f64,
    /// Elapsed steps `kτ`.
    pub steps: u64,
    pub bound_psrl: f64,
    pub bound_ucrl: f64,
    /// Cumulative confidence widths along the visited path, over all reward
    /// factors.
    pub width_sum_reward: f64,
    pub width_sum_transition: f64,
    /// Sampled or optimistic `ρ·V_1` minus the true optimal `ρ·V*_1`.
    pub value_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub episodes: Vec<EpisodeRecord>,
}

impl RunRecord {
    pub fn cumulative_regret(&self) -> f64 {
        self.episodes.last().map_or(0.0, |e| e.cum_regret)
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.delta_k).collect()
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub record: RunRecord,
    pub logs: Vec<EpisodeLog>,
    pub policies: Vec<Policy>,
    pub environment: FactoredMdp,
    pub wall_clock_seconds: f64,
}

/// `Σ_s ρ(s) (V*_1(s) − V^μ_1(s))` on the true model.
pub fn episode_regret(mdp: &TabularMdp, policy: &Policy, v_star: &ValueTable) -> f64 {
    let v_mu = policy_value(mdp, policy);
    mdp.initial_distribution
        .iter()
        .zip(v_star.initial().iter().zip(v_mu.initial()))
        .map(|(p, (a, b))| p * (a - b))
        .sum()
}

/// Plays one episode of `policy` from a state drawn from `ρ`.
pub fn simulate_episode(mdp: &FactoredMdp, index: &FlatIndex, policy: &Policy, rng: &mut SimRng) -> Result<EpisodeLog> {
    let mut state = sample_categorical(&mdp.initial_distribution, rng);
    let mut steps = Vec::with_capacity(mdp.structure.horizon);
    for h in 0..mdp.structure.horizon {
        let action = policy.action(state, h);
        let x = index.point(state, action)?;
        let out = mdp.sample_step(&x, rng)?;
        let next_state = index.state_index(out.next_state.coords())?;
        steps.push(Step {
            state,
            action,
            rewards: out.rewards,
            next_state,
        });
        state = next_state;
    }
    Ok(EpisodeLog { steps })
}

/// Regret-bound overlays as functions of the elapsed steps.
enum Overlay {
    Symmetric { m: usize, tau: usize, j: u64, k: u64, delta: f64 },
    General { inputs: BoundInputs },
}

impl Overlay {
    fn new(config: &ExperimentConfig, env: &FactoredMdp, tab: &TabularMdp) -> Result<Self> {
        let delta = config.agent.delta;
        Ok(match &config.environment {
            EnvironmentSpec::Symmetric { m, k, zeta, horizon, .. } => Overlay::Symmetric {
                m: *m,
                tau: *horizon,
                j: (*k as u64).pow(*zeta as u32),
                k: *k as u64,
                delta,
            },
            _ => Overlay::General {
                inputs: BoundInputs::new(env.structure.clone(), 1, delta, optimal_span(tab), diameter(tab)?),
            },
        })
    }

    fn at(&self, steps: u64) -> (f64, f64) {
        match self {
            Overlay::Symmetric { m, tau, j, k, delta } => (
                corollary_psrl(*m, *tau, *j, *k, steps),
                corollary_ucrl(*m, *tau, *j, *k, steps, *delta).unwrap_or(f64::NAN),
            ),
            Overlay::General { inputs } => {
                let at = BoundInputs::new(inputs.structure.clone(), steps, inputs.delta, inputs.span, inputs.diameter);
                (
                    psrl_regret_bound(&at).unwrap_or(f64::NAN),
                    ucrl_regret_bound(&at).unwrap_or(f64::NAN),
                )
            }
        }
    }
}

/// One seed of an experiment.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<RunArtifacts> {
    let wrap = |episode: usize| {
        move |e: FrlError| FrlError::Run {
            seed,
            episode,
            source: Box::new(e),
        }
    };
    let started = Instant::now();
    let cap = config.cap();
    let env = build_environment(&config.environment, &config.agent.prior, seed, cap).map_err(wrap(0))?;
    let index = FlatIndex::new(&env.structure, cap).map_err(wrap(0))?;
    let tab = env.flatten_with(&index).map_err(wrap(0))?;
    let (v_star, optimal) = value_iteration(&tab);
    let v_star_rho = v_star.expected_initial(&env.initial_distribution);
    let overlay = Overlay::new(config, &env, &tab).map_err(wrap(0))?;

    let mut agent = build_agent(&config.agent, &env, cap, &optimal).map_err(wrap(0))?;
    let mut sim_rng = stream_rng(seed, Stream::Simulation);
    let mut agent_rng = stream_rng(seed, Stream::Agent);
    let tau = env.structure.horizon as u64;

    let mut logs = Vec::with_capacity(config.episodes);
    let mut policies = Vec::with_capacity(config.episodes);
    let mut episodes = Vec::with_capacity(config.episodes);
    let mut cum_regret = 0.0;
    for k in 1..=config.episodes {
        let plan = agent.plan(k, &mut agent_rng).map_err(wrap(k))?;
        let log = simulate_episode(&env, &index, &plan.policy, &mut sim_rng).map_err(wrap(k))?;
        agent.observe(&log);
        let delta_k = episode_regret(&tab, &plan.policy, &v_star);
        cum_regret += delta_k;
        let steps = k as u64 * tau;
        let (bound_psrl, bound_ucrl) = overlay.at(steps);
        episodes.push(EpisodeRecord {
            k,
            delta_k,
            cum_regret,
            steps,
            bound_psrl,
            bound_ucrl,
            width_sum_reward: 0.0,
            width_sum_transition: 0.0,
            value_gap: plan.model_value.map(|v| v - v_star_rho),
        });
        logs.push(log);
        policies.push(plan.policy);
    }

    if config.audit.width {
        let sums = width_sums(&env.structure, &index, &logs, config.audit.delta).map_err(wrap(config.episodes))?;
        for (record, (r, t)) in episodes.iter_mut().zip(sums) {
            record.width_sum_reward = r;
            record.width_sum_transition = t;
        }
    } else {
        for record in &mut episodes {
            record.width_sum_reward = f64::NAN;
            record.width_sum_transition = f64::NAN;
        }
    }

    Ok(RunArtifacts {
        record: RunRecord {
            seed,
            config_hash: config.hash(),
            episodes,
        },
        logs,
        policies,
        environment: env,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs every seed, concurrently when `execution` allows, and returns the
/// runs in seed order. The first failing seed's error is returned.
pub fn run_experiment(config: &ExperimentConfig, execution: Execution) -> Result<Vec<RunArtifacts>> {
    config.validate()?;
    par::map(execution, &config.seeds, |&seed| run_single(config, seed))
        .into_iter()
        .collect()
}

/// Least-squares slope of a series against its index.
pub fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentConfig, Algorithm};
    use crate::config::AuditConfig;
    use crate::fmdp::{GraphStructure, Scope, DEFAULT_CAP};

    fn config(algorithm: Algorithm, episodes: usize) -> ExperimentConfig {
        ExperimentConfig {
            environment: EnvironmentSpec::Symmetric {
                m: 2,
                k: 2,
                zeta: 1,
                horizon: 3,
                from_prior: false,
            },
            agent: AgentConfig::new(algorithm),
            episodes,
            seeds: vec![1, 2, 3],
            output: None,
            audit: AuditConfig::default(),
            cap: None,
        }
    }

    #[test]
    fn streams_differ() {
        use rand::Rng;
        let a: u64 = stream_rng(1, Stream::Environment).random();
        let b: u64 = stream_rng(1, Stream::Agent).random();
        assert_ne!(a, b);
    }

    #[test]
    fn oracle_has_zero_regret() {
        let runs = run_experiment(&config(Algorithm::Oracle, 20), Execution::Sequential).unwrap();
        for run in runs {
            assert!(run.record.episodes.iter().all(|e| e.delta_k == 0.0));
        }
    }

    #[test]
    fn bandit_gap() {
        // one state, two arms with means 0.9 and 0.4, one step
        let g = GraphStructure::new(vec![1], vec![1, 2], vec![Scope::new(vec![1]).unwrap()], vec![Scope::new(vec![1]).unwrap()], 1, 1.0, 0.0).unwrap();
        let mdp = FactoredMdp::new(g, vec![vec![0.9, 0.4]], vec![vec![vec![1.0], vec![1.0]]], vec![1.0]).unwrap();
        let tab = mdp.flatten(DEFAULT_CAP).unwrap();
        let (v, opt) = value_iteration(&tab);
        assert_eq!(episode_regret(&tab, &opt, &v), 0.0);
        let bad = Policy::constant(1, 1, 1);
        assert!((episode_regret(&tab, &bad, &v) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn accounting_is_consistent() {
        let runs = run_experiment(&config(Algorithm::UcrlFactored, 15), Execution::Parallel).unwrap();
        assert_eq!(runs.iter().map(|r| r.record.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
        for run in &runs {
            let mut sum = 0.0;
            for e in &run.record.episodes {
                assert!(e.delta_k >= -1e-9);
                assert!(e.delta_k <= 3.0 + 1e-9);
                sum += e.delta_k;
                assert_eq!(sum, e.cum_regret);
            }
            assert_eq!(run.logs.len(), 15);
            assert!(run.logs.iter().all(|l| l.len() == 3));
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let c = config(Algorithm::Psrl, 10);
        let a = run_experiment(&c, Execution::Parallel).unwrap();
        let b = run_experiment(&c, Execution::Sequential).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.record, y.record);
            assert_eq!(x.logs, y.logs);
        }
    }

    #[test]
    fn slope_of_line() {
        assert!((slope(&[1.0, 3.0, 5.0, 7.0]) - 2.0).abs() < 1e-12);
        assert_eq!(slope(&[4.0]), 0.0);
    }
}
