//! Learning agents: posterior sampling, optimism over factored confidence
//! families, their structure-blind variants, and two reference policies.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{FrlError, Result};
use crate::estimation::{ConfidenceFamily, FactorStats};
use crate::fmdp::{gaussian, FactoredMdp, FlatIndex, GraphStructure, Scope};
use crate::planner::{extended_value_iteration, plan, InnerSolver, Policy, ValueTable};
use crate::trajectory::EpisodeLog;
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Psrl,
    UcrlFactored,
    PsrlFlat,
    UcrlFlat,
    /// Plays the true optimal policy.
    Oracle,
    /// Draws a fresh uniformly random policy each episode.
    UniformRandom,
}

impl Algorithm {
    pub fn is_flat(self) -> bool {
        matches!(self, Algorithm::PsrlFlat | Algorithm::UcrlFlat)
    }

    pub fn is_psrl(self) -> bool {
        matches!(self, Algorithm::Psrl | Algorithm::PsrlFlat)
    }

    pub fn is_ucrl(self) -> bool {
        matches!(self, Algorithm::UcrlFactored | Algorithm::UcrlFlat)
    }
}

/// Prior hyperparameters. Unset reward parameters default to `μ₀ = C/2`
/// and `v₀ = C²` of the structure the agent learns on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default)]
    pub mu0: Option<f64>,
    #[serde(default)]
    pub v0: Option<f64>,
}

fn default_alpha0() -> f64 {
    1.0
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            alpha0: default_alpha0(),
            mu0: None,
            v0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub prior: PriorConfig,
    /// Coordinate-ascent passes per optimistic backup.
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default)]
    pub inner: InnerMode,
}

/// Inner maximization used by the optimistic planner.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMode {
    #[default]
    CoordinateAscent,
    Exact,
}

fn default_delta() -> f64 {
    0.1
}

fn default_sweeps() -> usize {
    1
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        AgentConfig {
            algorithm,
            delta: default_delta(),
            prior: PriorConfig::default(),
            sweeps: default_sweeps(),
            inner: InnerMode::default(),
        }
    }

    pub fn solver(&self) -> InnerSolver {
        match self.inner {
            InnerMode::CoordinateAscent => InnerSolver::CoordinateAscent { sweeps: self.sweeps },
            InnerMode::Exact => InnerSolver::Exact,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(FrlError::Config {
                path: "agent.delta".into(),
                message: format!("{} is not in (0, 1)", self.delta),
            });
        }
        if !(self.prior.alpha0 > 0.0 && self.prior.alpha0.is_finite()) {
            return Err(FrlError::Config {
                path: "agent.prior.alpha0".into(),
                message: format!("{} must be positive", self.prior.alpha0),
            });
        }
        if self.sweeps == 0 {
            return Err(FrlError::Config {
                path: "agent.sweeps".into(),
                message: "must be at least 1".into(),
            });
        }
        if let Some(v0) = self.prior.v0 {
            if !(v0 > 0.0 && v0.is_finite()) {
                return Err(FrlError::Config {
                    path: "agent.prior.v0".into(),
                    message: format!("{v0} must be positive"),
                });
            }
        }
        if let Some(mu0) = self.prior.mu0 {
            if !mu0.is_finite() {
                return Err(FrlError::Config {
                    path: "agent.prior.mu0".into(),
                    message: format!("{mu0} must be finite"),
                });
            }
        }
        Ok(())
    }
}

/// Dirichlet posteriors over transition rows and Normal posteriors over
/// reward means, held as prior hyperparameters plus sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredPosterior {
    pub structure: GraphStructure,
    pub alpha0: f64,
    pub mu0: f64,
    pub v0: f64,
    pub stats: FactorStats,
    pub initial_distribution: Vec<f64>,
}

impl FactoredPosterior {
    pub fn new(structure: GraphStructure, prior: &PriorConfig, initial_distribution: Vec<f64>) -> Result<Self> {
        let c = structure.reward_mean_bound;
        let alpha0 = prior.alpha0;
        let mu0 = prior.mu0.unwrap_or(c / 2.0);
        let v0 = prior.v0.unwrap_or(c * c);
        if !(alpha0 > 0.0) || !(v0 > 0.0) {
            return Err(FrlError::Parameter(format!(
                "prior needs α₀ > 0 and v₀ > 0 (got {alpha0}, {v0})"
            )));
        }
        Ok(FactoredPosterior {
            stats: FactorStats::new(&structure),
            structure,
            alpha0,
            mu0,
            v0,
            initial_distribution,
        })
    }

    /// Posterior Dirichlet parameters for row `z` of transition factor `j`.
    pub fn dirichlet(&self, j: usize, z: usize) -> Vec<f64> {
        self.stats.transition[j].outcomes[z]
            .iter()
            .map(|&c| self.alpha0 + c as f64)
            .collect()
    }

    /// Posterior `(mean, variance)` of a reward mean under known noise `σ`.
    pub fn reward_posterior(&self, i: usize, z: usize) -> (f64, f64) {
        let n = self.stats.reward[i].counts[z] as f64;
        let sum = self.stats.reward[i].sums[z];
        let sigma2 = self.structure.reward_noise.powi(2);
        if sigma2 == 0.0 {
            return if n > 0.0 { (sum / n, 0.0) } else { (self.mu0, self.v0) };
        }
        let precision = 1.0 / self.v0 + n / sigma2;
        ((self.mu0 / self.v0 + sum / sigma2) / precision, 1.0 / precision)
    }
}

pub(crate) fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        // every gamma draw underflowed; fall back to one categorical draw
        let a_total: f64 = alpha.iter().sum();
        let probs: Vec<f64> = alpha.iter().map(|a| a / a_total).collect();
        let y = crate::fmdp::sample_categorical(&probs, rng);
        draws.iter_mut().enumerate().for_each(|(i, d)| *d = if i == y { 1.0 } else { 0.0 });
    }
    draws
}

/// One model from the posterior: Dirichlet rows, Normal reward means clipped
/// into `[0, C]`.
pub fn psrl_sample_mdp<R: Rng + ?Sized>(posterior: &FactoredPosterior, rng: &mut R) -> FactoredMdp {
    let g = &posterior.structure;
    let c = g.reward_mean_bound;
    let transition_factors = (0..g.num_state_factors())
        .map(|j| {
            (0..g.transition_domain_size(j))
                .map(|z| sample_dirichlet(&posterior.dirichlet(j, z), rng))
                .collect()
        })
        .collect();
    let reward_factors = (0..g.num_reward_factors())
        .map(|i| {
            (0..g.reward_domain_size(i))
                .map(|z| {
                    let (mean, var) = posterior.reward_posterior(i, z);
                    gaussian(mean, var.sqrt(), rng).clamp(0.0, c)
                })
                .collect()
        })
        .collect();
    let mdp = FactoredMdp {
        structure: g.clone(),
        reward_factors,
        transition_factors,
        initial_distribution: posterior.initial_distribution.clone(),
    };
    debug_assert!(mdp.validate().is_empty());
    mdp
}

/// Adds an episode's observations to the posterior's sufficient statistics.
pub fn psrl_update(posterior: &mut FactoredPosterior, index: &FlatIndex, episode: &EpisodeLog) {
    posterior.stats.record_episode(index, episode);
}

#[derive(Debug, Clone)]
pub struct PsrlPlan {
    pub policy: Policy,
    pub model: FactoredMdp,
    pub values: ValueTable,
}

/// Samples a model and plans exactly for it.
pub fn psrl_episode<R: Rng + ?Sized>(
    posterior: &FactoredPosterior,
    index: &FlatIndex,
    episode: usize,
    rng: &mut R,
) -> Result<PsrlPlan> {
    let model = psrl_sample_mdp(posterior, rng);
    let tabular = model.flatten_with(index)?;
    let epsilon = (posterior.structure.horizon as f64 / episode.max(1) as f64).sqrt();
    let (values, policy) = plan(&tabular, epsilon);
    Ok(PsrlPlan {
        policy,
        model,
        values,
    })
}

#[derive(Debug, Clone)]
pub struct UcrlPlan {
    pub policy: Policy,
    pub family: ConfidenceFamily,
    pub model: FactoredMdp,
    pub values: ValueTable,
}

/// Builds the episode-`k` confidence family and plans optimistically in it.
pub fn ucrl_episode(
    stats: &FactorStats,
    structure: &GraphStructure,
    index: &FlatIndex,
    initial_distribution: &[f64],
    k: usize,
    delta: f64,
    solver: InnerSolver,
) -> Result<UcrlPlan> {
    let family = ConfidenceFamily::build(stats, structure, k, delta)?;
    let out = extended_value_iteration(&family, index, initial_distribution, solver)?;
    Ok(UcrlPlan {
        policy: out.policy,
        family,
        model: out.model,
        values: out.values,
    })
}

/// The structure-blind equivalent: one state factor of size `|S|`, one action
/// factor of size `|A|`, and a single reward and transition factor over all
/// of `X`. The lone reward factor carries the summed mean bound `lC` and
/// noise `σ√l`.
pub fn flat_wrap(structure: &GraphStructure, cap: usize) -> Result<GraphStructure> {
    let index = FlatIndex::new(structure, cap)?;
    let l = structure.num_reward_factors();
    GraphStructure::new(
        vec![index.num_states()],
        vec![index.num_states(), index.num_actions()],
        vec![Scope::full(2)],
        vec![Scope::full(2)],
        structure.horizon,
        structure.reward_mean_bound * l.max(1) as f64,
        structure.reward_noise * (l as f64).sqrt(),
    )
}

/// Re-encodes a factored model over its flat structure.
pub fn flat_encode(mdp: &FactoredMdp, cap: usize) -> Result<FactoredMdp> {
    let structure = flat_wrap(&mdp.structure, cap)?;
    let tabular = mdp.flatten(cap)?;
    let ns = tabular.num_states;
    let rows = tabular.transitions.chunks(ns).map(<[f64]>::to_vec).collect();
    FactoredMdp::new(
        structure,
        vec![tabular.expected_reward.clone()],
        vec![rows],
        tabular.initial_distribution.clone(),
    )
}

/// What an agent commits to for one episode.
#[derive(Debug, Clone)]
pub struct EpisodePlan {
    pub policy: Policy,
    /// `ρ · V_1` under the agent's sampled or optimistic model.
    pub model_value: Option<f64>,
    pub family: Option<ConfidenceFamily>,
}

pub trait Agent: Send {
    fn plan(&mut self, episode: usize, rng: &mut SimRng) -> Result<EpisodePlan>;

    fn observe(&mut self, episode: &EpisodeLog);

    /// Serializable learning state, for agents that have one.
    fn snapshot(&self) -> Option<AgentSnapshot> {
        None
    }
}

/// Checkpoint of a learning agent's state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub config: AgentConfig,
    /// Structure of the environment, before any flat re-encoding.
    pub structure: GraphStructure,
    pub initial_distribution: Vec<f64>,
    pub episodes_observed: usize,
    /// Statistics in the agent's own encoding.
    pub stats: FactorStats,
}

impl AgentSnapshot {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Maps environment observations into the agent's own encoding.
#[derive(Debug, Clone)]
struct View {
    structure: GraphStructure,
    index: FlatIndex,
    flat: bool,
}

impl View {
    fn new(env: &GraphStructure, flat: bool, cap: usize) -> Result<Self> {
        let structure = if flat { flat_wrap(env, cap)? } else { env.clone() };
        let index = FlatIndex::new(&structure, cap)?;
        Ok(View {
            structure,
            index,
            flat,
        })
    }

    fn record(&self, stats: &mut FactorStats, episode: &EpisodeLog) {
        if self.flat {
            for st in &episode.steps {
                let total: f64 = st.rewards.iter().sum();
                stats.update_indexed(&self.index, self.index.pair(st.state, st.action), &[total], st.next_state);
            }
        } else {
            stats.record_episode(&self.index, episode);
        }
    }
}

pub struct PsrlAgent {
    config: AgentConfig,
    env_structure: GraphStructure,
    view: View,
    posterior: FactoredPosterior,
    episodes: usize,
}

impl PsrlAgent {
    pub fn new(config: AgentConfig, env: &GraphStructure, rho: &[f64], cap: usize) -> Result<Self> {
        config.validate()?;
        let view = View::new(env, config.algorithm.is_flat(), cap)?;
        let posterior = FactoredPosterior::new(view.structure.clone(), &config.prior, rho.to_vec())?;
        Ok(PsrlAgent {
            config,
            env_structure: env.clone(),
            view,
            posterior,
            episodes: 0,
        })
    }

    pub fn posterior(&self) -> &FactoredPosterior {
        &self.posterior
    }
}

impl Agent for PsrlAgent {
    fn plan(&mut self, episode: usize, rng: &mut SimRng) -> Result<EpisodePlan> {
        let out = psrl_episode(&self.posterior, &self.view.index, episode, rng)?;
        Ok(EpisodePlan {
            model_value: Some(out.values.expected_initial(&self.posterior.initial_distribution)),
            policy: out.policy,
            family: None,
        })
    }

    fn observe(&mut self, episode: &EpisodeLog) {
        self.view.record(&mut self.posterior.stats, episode);
        self.episodes += 1;
    }

    fn snapshot(&self) -> Option<AgentSnapshot> {
        Some(AgentSnapshot {
            config: self.config.clone(),
            structure: self.env_structure.clone(),
            initial_distribution: self.posterior.initial_distribution.clone(),
            episodes_observed: self.episodes,
            stats: self.posterior.stats.clone(),
        })
    }
}

pub struct UcrlAgent {
    config: AgentConfig,
    env_structure: GraphStructure,
    view: View,
    stats: FactorStats,
    rho: Vec<f64>,
    episodes: usize,
}

impl UcrlAgent {
    pub fn new(config: AgentConfig, env: &GraphStructure, rho: &[f64], cap: usize) -> Result<Self> {
        config.validate()?;
        let view = View::new(env, config.algorithm.is_flat(), cap)?;
        Ok(UcrlAgent {
            stats: FactorStats::new(&view.structure),
            config,
            env_structure: env.clone(),
            view,
            rho: rho.to_vec(),
            episodes: 0,
        })
    }

    pub fn stats(&self) -> &FactorStats {
        &self.stats
    }
}

impl Agent for UcrlAgent {
    fn plan(&mut self, episode: usize, _rng: &mut SimRng) -> Result<EpisodePlan> {
        let out = ucrl_episode(
            &self.stats,
            &self.view.structure,
            &self.view.index,
            &self.rho,
            episode,
            self.config.delta,
            self.config.solver(),
        )?;
        Ok(EpisodePlan {
            model_value: Some(out.values.expected_initial(&self.rho)),
            policy: out.policy,
            family: Some(out.family),
        })
    }

    fn observe(&mut self, episode: &EpisodeLog) {
        self.view.record(&mut self.stats, episode);
        self.episodes += 1;
    }

    fn snapshot(&self) -> Option<AgentSnapshot> {
        Some(AgentSnapshot {
            config: self.config.clone(),
            structure: self.env_structure.clone(),
            initial_distribution: self.rho.clone(),
            episodes_observed: self.episodes,
            stats: self.stats.clone(),
        })
    }
}

pub struct OracleAgent {
    policy: Policy,
}

impl OracleAgent {
    pub fn new(policy: Policy) -> Self {
        OracleAgent { policy }
    }
}

impl Agent for OracleAgent {
    fn plan(&mut self, _episode: usize, _rng: &mut SimRng) -> Result<EpisodePlan> {
        Ok(EpisodePlan {
            policy: self.policy.clone(),
            model_value: None,
            family: None,
        })
    }

    fn observe(&mut self, _episode: &EpisodeLog) {}
}

pub struct UniformRandomAgent {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
}

impl UniformRandomAgent {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        UniformRandomAgent {
            num_states,
            num_actions,
            horizon,
        }
    }
}

impl Agent for UniformRandomAgent {
    fn plan(&mut self, _episode: usize, rng: &mut SimRng) -> Result<EpisodePlan> {
        let actions = (0..self.num_states * self.horizon)
            .map(|_| rng.random_range(0..self.num_actions))
            .collect();
        Ok(EpisodePlan {
            policy: Policy::from_actions(self.num_states, self.horizon, actions)?,
            model_value: None,
            family: None,
        })
    }

    fn observe(&mut self, _episode: &EpisodeLog) {}
}

/// Instantiates the configured agent for an environment. `optimal` is only
/// used by the oracle.
pub fn build_agent(config: &AgentConfig, env: &FactoredMdp, cap: usize, optimal: &Policy) -> Result<Box<dyn Agent>> {
    let g = &env.structure;
    let rho = &env.initial_distribution;
    Ok(match config.algorithm {
        Algorithm::Psrl | Algorithm::PsrlFlat => Box::new(PsrlAgent::new(config.clone(), g, rho, cap)?),
        Algorithm::UcrlFactored | Algorithm::UcrlFlat => Box::new(UcrlAgent::new(config.clone(), g, rho, cap)?),
        Algorithm::Oracle => Box::new(OracleAgent::new(optimal.clone())),
        Algorithm::UniformRandom => Box::new(UniformRandomAgent::new(
            g.num_states()?,
            g.num_actions()?,
            g.horizon,
        )),
    })
}

/// Rebuilds a learning agent from a checkpoint.
pub fn restore_agent(snapshot: &AgentSnapshot, cap: usize) -> Result<Box<dyn Agent>> {
    let s = snapshot;
    match s.config.algorithm {
        a if a.is_psrl() => {
            let mut agent = PsrlAgent::new(s.config.clone(), &s.structure, &s.initial_distribution, cap)?;
            check_stats_shape(&agent.posterior.stats, &s.stats)?;
            agent.posterior.stats = s.stats.clone();
            agent.episodes = s.episodes_observed;
            Ok(Box::new(agent))
        }
        a if a.is_ucrl() => {
            let mut agent = UcrlAgent::new(s.config.clone(), &s.structure, &s.initial_distribution, cap)?;
            check_stats_shape(&agent.stats, &s.stats)?;
            agent.stats = s.stats.clone();
            agent.episodes = s.episodes_observed;
            Ok(Box::new(agent))
        }
        other => Err(FrlError::Parameter(format!("{other:?} agents have no checkpoint state"))),
    }
}

fn check_stats_shape(fresh: &FactorStats, loaded: &FactorStats) -> Result<()> {
    let shape = |s: &FactorStats| {
        (
            s.reward.iter().map(|f| f.counts.len()).collect::<Vec<_>>(),
            s.transition
                .iter()
                .map(|f| (f.counts.len(), f.outcomes.first().map_or(0, Vec::len)))
                .collect::<Vec<_>>(),
        )
    };
    if shape(fresh) == shape(loaded) {
        Ok(())
    } else {
        Err(FrlError::Structure("checkpoint statistics do not match the structure".into()))
    }
}
