//! Regret bound calculators and the connectedness measures they depend on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{psrl_sample_mdp, FactoredPosterior};
use crate::error::{FrlError, Result};
use crate::fmdp::{FlatIndex, GraphStructure, TabularMdp};
use crate::planner::{span, value_iteration};

/// How the in-log symbol `k` of the full theorems is instantiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogSymbol {
    /// `⌈T / τ⌉`, the number of episodes up to `T`.
    Episodes,
    /// The largest factor size `K`.
    FactorSize,
    Value(u64),
}

impl LogSymbol {
    pub fn resolve(self, structure: &GraphStructure, steps: u64) -> u64 {
        match self {
            LogSymbol::Episodes => steps.div_ceil(structure.horizon as u64).max(1),
            LogSymbol::FactorSize => structure.max_factor_size() as u64,
            LogSymbol::Value(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub structure: GraphStructure,
    /// Elapsed time steps `T`.
    pub steps: u64,
    pub delta: f64,
    /// Span `Ψ` (or its expectation for the Bayesian bound).
    pub span: f64,
    pub diameter: f64,
    pub log_symbol: u64,
}

impl BoundInputs {
    pub fn new(structure: GraphStructure, steps: u64, delta: f64, span: f64, diameter: f64) -> Self {
        let log_symbol = LogSymbol::Episodes.resolve(&structure, steps);
        BoundInputs {
            structure,
            steps,
            delta,
            span,
            diameter,
            log_symbol,
        }
    }

    pub fn with_log_symbol(mut self, symbol: LogSymbol) -> Self {
        self.log_symbol = symbol.resolve(&self.structure, self.steps);
        self
    }

    fn check(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(FrlError::Domain("T must be at least 1".into()));
        }
        if !(self.span >= 0.0) {
            return Err(FrlError::Domain(format!("span {} must be nonnegative", self.span)));
        }
        if !(self.diameter >= 0.0) {
            return Err(FrlError::Domain(format!(
                "diameter {} must be nonnegative",
                self.diameter
            )));
        }
        if self.log_symbol == 0 {
            return Err(FrlError::Domain("in-log symbol k must be positive".into()));
        }
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(FrlError::Domain(format!("δ = {delta} must lie in (0, 1)")))
    }
}

/// Expected-regret bound for posterior sampling.
pub fn psrl_regret_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.check()?;
    if inputs.steps <= 4 {
        return Err(FrlError::Domain(format!(
            "the posterior-sampling bound needs T > 4 (got T = {})",
            inputs.steps
        )));
    }
    let g = &inputs.structure;
    let t = inputs.steps as f64;
    let k = inputs.log_symbol as f64;
    let tau = g.horizon as f64;
    let c = g.reward_mean_bound;
    let sigma = g.reward_noise;
    let l = g.num_reward_factors() as f64;
    let m = g.num_state_factors() as f64;

    let reward: f64 = (0..g.num_reward_factors())
        .map(|i| {
            let x = g.reward_domain_size(i) as f64;
            5.0 * tau * c * x + 12.0 * sigma * (x * t * (4.0 * l * x * k * t).ln()).sqrt()
        })
        .sum();
    let transition: f64 = (0..g.num_state_factors())
        .map(|j| {
            let x = g.transition_domain_size(j) as f64;
            let s = g.state_factor_sizes[j] as f64;
            5.0 * tau * x + 12.0 * (x * s * t * (4.0 * m * x * k * t).ln()).sqrt()
        })
        .sum();
    Ok(reward + 2.0 * t.sqrt() + 4.0 + inputs.span * (1.0 + 4.0 / (t - 4.0)) * transition)
}

/// High-probability bound for the optimistic algorithm. Infinite when the
/// diameter is infinite.
pub fn ucrl_regret_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.check()?;
    check_delta(inputs.delta)?;
    let g = &inputs.structure;
    let t = inputs.steps as f64;
    let k = inputs.log_symbol as f64;
    let delta = inputs.delta;
    let tau = g.horizon as f64;
    let c = g.reward_mean_bound;
    let sigma = g.reward_noise;
    let l = g.num_reward_factors() as f64;
    let m = g.num_state_factors() as f64;

    let reward: f64 = (0..g.num_reward_factors())
        .map(|i| {
            let x = g.reward_domain_size(i) as f64;
            5.0 * tau * c * x + 12.0 * sigma * (x * t * (12.0 * l * x * k * t / delta).ln()).sqrt()
        })
        .sum();
    if inputs.diameter == 0.0 {
        return Ok(reward + 2.0 * t.sqrt());
    }
    let cd = c * inputs.diameter;
    let transition: f64 = (0..g.num_state_factors())
        .map(|j| {
            let x = g.transition_domain_size(j) as f64;
            let s = g.state_factor_sizes[j] as f64;
            5.0 * tau * x + 12.0 * (x * s * t * (12.0 * m * x * k * t / delta).ln()).sqrt()
        })
        .sum();
    Ok(reward + 2.0 * t.sqrt() + cd * (2.0 * t * (6.0 / delta).ln()).sqrt() + cd * transition)
}

/// `15 m τ √(J K T ln(2 m J T))` for the symmetric structure.
pub fn corollary_psrl(m: usize, tau: usize, j: u64, k: u64, t: u64) -> f64 {
    let (m, tau, j, k, t) = (m as f64, tau as f64, j as f64, k as f64, t as f64);
    15.0 * m * tau * (j * k * t * (2.0 * m * j * t).ln()).sqrt()
}

/// `15 m τ √(J K T ln(12 m J T / δ))` for the symmetric structure.
pub fn corollary_ucrl(m: usize, tau: usize, j: u64, k: u64, t: u64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let (m, tau, j, k, t) = (m as f64, tau as f64, j as f64, k as f64, t as f64);
    Ok(15.0 * m * tau * (j * k * t * (12.0 * m * j * t / delta).ln()).sqrt())
}

/// `4(τ C_F |X| + 1) + 4 √(2 d_T |X| T)`.
pub fn width_sum_bound(horizon: usize, cap: f64, domain_size: usize, d_final: f64, steps: usize) -> f64 {
    let x = domain_size as f64;
    4.0 * (horizon as f64 * cap * x + 1.0) + 4.0 * (2.0 * d_final * x * steps as f64).sqrt()
}

const HITTING_TOL: f64 = 1e-9;
const HITTING_MAX_SWEEPS: usize = 10_000_000;

/// Minimal expected hitting times of `target` from every state, or `None`
/// when some state cannot reach it.
pub fn hitting_times(mdp: &TabularMdp, target: usize) -> Result<Option<Vec<f64>>> {
    let ns = mdp.num_states;
    // backward reachability over the support graph
    let mut reach = vec![false; ns];
    reach[target] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..ns {
            if reach[s] {
                continue;
            }
            let hits = (0..mdp.num_actions)
                .any(|a| mdp.row(s, a).iter().zip(&reach).any(|(&p, &r)| p > 0.0 && r));
            if hits {
                reach[s] = true;
                changed = true;
            }
        }
    }
    if reach.iter().any(|r| !r) {
        return Ok(None);
    }
    let mut h = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    for _ in 0..HITTING_MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for s in 0..ns {
            next[s] = if s == target {
                0.0
            } else {
                let best = (0..mdp.num_actions)
                    .map(|a| mdp.row(s, a).iter().zip(&h).map(|(p, v)| p * v).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                1.0 + best
            };
            change = change.max((next[s] - h[s]).abs());
        }
        std::mem::swap(&mut h, &mut next);
        if change < HITTING_TOL {
            return Ok(Some(h));
        }
    }
    Err(FrlError::Domain(format!(
        "hitting times to state {target} did not converge"
    )))
}

/// `max_{s ≠ s'} min_μ E[T^μ_{s → s'}]`; infinite when some state is
/// unreachable, zero for a single state.
pub fn diameter(mdp: &TabularMdp) -> Result<f64> {
    let mut d: f64 = 0.0;
    for target in 0..mdp.num_states {
        match hitting_times(mdp, target)? {
            None => return Ok(f64::INFINITY),
            Some(h) => {
                for (s, &v) in h.iter().enumerate() {
                    if s != target {
                        d = d.max(v);
                    }
                }
            }
        }
    }
    Ok(d)
}

/// Span of the optimal first-step values of a known MDP.
pub fn optimal_span(mdp: &TabularMdp) -> f64 {
    span(value_iteration(mdp).0.initial())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Monte-Carlo estimate of `E[Ψ]` over models drawn from a posterior.
pub fn expected_span<R: Rng + ?Sized>(
    posterior: &FactoredPosterior,
    index: &FlatIndex,
    draws: usize,
    rng: &mut R,
) -> Result<SpanEstimate> {
    if draws == 0 {
        return Err(FrlError::Parameter("expected span needs at least one draw".into()));
    }
    let mut spans = Vec::with_capacity(draws);
    for _ in 0..draws {
        let model = psrl_sample_mdp(posterior, rng);
        spans.push(optimal_span(&model.flatten_with(index)?));
    }
    let n = draws as f64;
    let mean = spans.iter().sum::<f64>() / n;
    let var = if draws > 1 {
        spans.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(SpanEstimate {
        mean,
        std_error: (var / n).sqrt(),
        draws,
    })
}
