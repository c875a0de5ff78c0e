//! Seeded environment builders.

use rand::Rng;

use crate::agents::{psrl_sample_mdp, sample_dirichlet, FactoredPosterior, PriorConfig};
use crate::config::EnvironmentSpec;
use crate::error::Result;
use crate::fmdp::{FactoredMdp, FlatIndex, GraphStructure, Scope};
use crate::harness::run::{stream_rng, Stream};

/// The symmetric structure: `m` state and `m` action factors of size `K`,
/// `m − 1` reward factors and `m` transition factors, every scope a
/// contiguous window of `ζ` factor indices, `C = σ = 1`.
///
/// Reward factor `i` reads the window starting at factor `i`. Transition
/// factor `j` reads the window ending at action factor `j`, so each state
/// factor is driven by its own action.
pub fn symmetric_structure(m: usize, k: usize, zeta: usize, horizon: usize) -> Result<GraphStructure> {
    let n = 2 * m;
    let window = |start: usize| Scope::new((start..start + zeta).collect());
    let reward_scopes = (0..m.saturating_sub(1))
        .map(|i| window(i.min(n.saturating_sub(zeta))))
        .collect::<Result<Vec<_>>>()?;
    let transition_scopes = (0..m)
        .map(|j| window((m + j + 1).saturating_sub(zeta)))
        .collect::<Result<Vec<_>>>()?;
    GraphStructure::new(vec![k; m], vec![k; n], reward_scopes, transition_scopes, horizon, 1.0, 1.0)
}

/// Machines `0..m` in sequence, each of size `K`, and a single action
/// factor choosing which machine to service. Machine `j` evolves from its
/// neighbours `{j − 1, j, j + 1}` and the action; machine `i` contributes
/// reward factor `i`.
pub fn production_line_structure(machines: usize, k: usize, horizon: usize) -> Result<GraphStructure> {
    let m = machines;
    let reward_scopes = (0..m).map(|i| Scope::new(vec![i])).collect::<Result<Vec<_>>>()?;
    let transition_scopes = (0..m)
        .map(|j| {
            let mut scope: Vec<usize> = (j.saturating_sub(1)..=(j + 1).min(m - 1)).collect();
            scope.push(m);
            Scope::new(scope)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sizes = vec![k; m];
    sizes.push(m);
    GraphStructure::new(vec![k; m], sizes, reward_scopes, transition_scopes, horizon, 1.0, 1.0)
}

/// Dirichlet(1) transition rows, Uniform[0, C] reward means, uniform `ρ`.
pub fn random_tables<R: Rng + ?Sized>(structure: GraphStructure, cap: usize, rng: &mut R) -> Result<FactoredMdp> {
    let index = FlatIndex::new(&structure, cap)?;
    let c = structure.reward_mean_bound;
    let transition_factors = (0..structure.num_state_factors())
        .map(|j| {
            let ones = vec![1.0; structure.state_factor_sizes[j]];
            (0..structure.transition_domain_size(j))
                .map(|_| sample_dirichlet(&ones, rng))
                .collect()
        })
        .collect();
    let reward_factors = (0..structure.num_reward_factors())
        .map(|i| (0..structure.reward_domain_size(i)).map(|_| rng.random::<f64>() * c).collect())
        .collect();
    let ns = index.num_states();
    FactoredMdp::new(structure, reward_factors, transition_factors, vec![1.0 / ns as f64; ns])
}

pub fn make_symmetric_env(m: usize, k: usize, zeta: usize, horizon: usize, seed: u64, cap: usize) -> Result<FactoredMdp> {
    let mut rng = stream_rng(seed, Stream::Environment);
    random_tables(symmetric_structure(m, k, zeta, horizon)?, cap, &mut rng)
}

/// A true model drawn from the prior an agent would use.
pub fn draw_from_prior<R: Rng + ?Sized>(
    structure: GraphStructure,
    prior: &PriorConfig,
    cap: usize,
    rng: &mut R,
) -> Result<FactoredMdp> {
    let ns = FlatIndex::new(&structure, cap)?.num_states();
    let posterior = FactoredPosterior::new(structure, prior, vec![1.0 / ns as f64; ns])?;
    Ok(psrl_sample_mdp(&posterior, rng))
}

pub fn make_production_line(machines: usize, k: usize, horizon: usize, seed: u64, cap: usize) -> Result<FactoredMdp> {
    let mut rng = stream_rng(seed, Stream::Environment);
    random_tables(production_line_structure(machines, k, horizon)?, cap, &mut rng)
}

/// The true model for one run, drawn from the seed's environment stream.
pub fn build_environment(spec: &EnvironmentSpec, prior: &PriorConfig, seed: u64, cap: usize) -> Result<FactoredMdp> {
    let mut rng = stream_rng(seed, Stream::Environment);
    let mdp = match spec {
        EnvironmentSpec::Symmetric {
            m,
            k,
            zeta,
            horizon,
            from_prior,
        } => {
            let structure = symmetric_structure(*m, *k, *zeta, *horizon)?;
            if *from_prior {
                draw_from_prior(structure, prior, cap, &mut rng)?
            } else {
                random_tables(structure, cap, &mut rng)?
            }
        }
        EnvironmentSpec::ProductionLine { machines, k, horizon } => {
            random_tables(production_line_structure(*machines, *k, *horizon)?, cap, &mut rng)?
        }
        EnvironmentSpec::File { path } => FactoredMdp::read_json(path)?,
    };
    FlatIndex::new(&mdp.structure, cap)?;
    Ok(mdp)
}

/// Checks that a spec's environment can be flattened under `cap`, without
/// drawing any tables.
pub fn check_feasible(spec: &EnvironmentSpec, cap: usize) -> Result<()> {
    let structure = match spec {
        EnvironmentSpec::Symmetric { m, k, zeta, horizon, .. } => symmetric_structure(*m, *k, *zeta, *horizon)?,
        EnvironmentSpec::ProductionLine { machines, k, horizon } => production_line_structure(*machines, *k, *horizon)?,
        EnvironmentSpec::File { path } => FactoredMdp::read_json(path)?.structure,
    };
    FlatIndex::new(&structure, cap).map(|_| ())
}
