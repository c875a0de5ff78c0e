//! Per-factor visit counts, empirical estimates, confidence families and the
//! concentration bounds behind them.
//!
//! Radii follow `√(d / n)` with an infinite radius for unvisited rows, so an
//! unvisited row never constrains the family. Widths are `2 · radius`, capped
//! at the diameter of the factor's class (`C` for reward means, `2` for L1
//! balls of distributions).

use serde::{Deserialize, Serialize};

use crate::bounds::width_sum_bound;
use crate::error::{FactorKind, FrlError, Result};
use crate::fmdp::{FactoredMdp, FactoredVector, FlatIndex, GraphStructure};
use crate::trajectory::EpisodeLog;

/// Current schema of [`StatsSnapshot`].
pub const STATS_SCHEMA_VERSION: u32 = 1;

/// Slack when comparing a deviation against its radius.
const CONTAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub counts: Vec<u64>,
    pub sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub counts: Vec<u64>,
    /// `outcomes[z][y]`: times `y` followed row `z`.
    pub outcomes: Vec<Vec<u64>>,
}

/// Visit counts and sufficient statistics for every factor row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorStats {
    pub reward: Vec<RewardStats>,
    pub transition: Vec<TransitionStats>,
}

impl FactorStats {
    pub fn new(structure: &GraphStructure) -> Self {
        let reward = (0..structure.num_reward_factors())
            .map(|i| {
                let rows = structure.reward_domain_size(i);
                RewardStats {
                    counts: vec![0; rows],
                    sums: vec![0.0; rows],
                }
            })
            .collect();
        let transition = (0..structure.num_state_factors())
            .map(|j| {
                let rows = structure.transition_domain_size(j);
                TransitionStats {
                    counts: vec![0; rows],
                    outcomes: vec![vec![0; structure.state_factor_sizes[j]]; rows],
                }
            })
            .collect();
        FactorStats { reward, transition }
    }

    /// Records one observation at the combined point `x`.
    pub fn update(
        &mut self,
        structure: &GraphStructure,
        x: &FactoredVector,
        rewards: &[f64],
        s_next: &FactoredVector,
    ) -> Result<()> {
        if rewards.len() != self.reward.len() || s_next.len() != self.transition.len() {
            return Err(FrlError::Structure(format!(
                "observation has {} rewards and {} next-state factors, expected {} and {}",
                rewards.len(),
                s_next.len(),
                self.reward.len(),
                self.transition.len()
            )));
        }
        let reward_rows = structure
            .reward_scopes
            .iter()
            .map(|scope| structure.row_of(x, scope))
            .collect::<Result<Vec<_>>>()?;
        let transition_rows = structure
            .transition_scopes
            .iter()
            .map(|scope| structure.row_of(x, scope))
            .collect::<Result<Vec<_>>>()?;
        for (j, &y) in s_next.coords().iter().enumerate() {
            if y >= structure.state_factor_sizes[j] {
                return Err(FrlError::Structure(format!(
                    "next-state coordinate {j} out of range: {y}"
                )));
            }
        }
        for ((f, z), &r) in self.reward.iter_mut().zip(reward_rows).zip(rewards) {
            f.counts[z] += 1;
            f.sums[z] += r;
        }
        for ((f, z), &y) in self.transition.iter_mut().zip(transition_rows).zip(s_next.coords()) {
            f.counts[z] += 1;
            f.outcomes[z][y] += 1;
        }
        Ok(())
    }

    /// Fast path for flat observations addressed through a prebuilt index.
    pub fn update_indexed(&mut self, index: &FlatIndex, pair: usize, rewards: &[f64], next_state: usize) {
        for (i, (f, &r)) in self.reward.iter_mut().zip(rewards).enumerate() {
            let z = index.reward_row(i, pair);
            f.counts[z] += 1;
            f.sums[z] += r;
        }
        let coords = index.state_coords(next_state);
        for (j, (f, &y)) in self.transition.iter_mut().zip(coords).enumerate() {
            let z = index.transition_row(j, pair);
            f.counts[z] += 1;
            f.outcomes[z][y] += 1;
        }
    }

    pub fn record_episode(&mut self, index: &FlatIndex, episode: &EpisodeLog) {
        for st in &episode.steps {
            self.update_indexed(index, index.pair(st.state, st.action), &st.rewards, st.next_state);
        }
    }

    /// `f̂_t(z)` for transition factor `j`.
    pub fn empirical_transition(&self, j: usize, z: usize) -> Result<Vec<f64>> {
        let f = &self.transition[j];
        let n = f.counts[z];
        if n == 0 {
            return Err(FrlError::NoData {
                kind: FactorKind::Transition,
                factor: j,
                row: z,
            });
        }
        Ok(f.outcomes[z].iter().map(|&c| c as f64 / n as f64).collect())
    }

    pub fn empirical_reward(&self, i: usize, z: usize) -> Result<f64> {
        let f = &self.reward[i];
        if f.counts[z] == 0 {
            return Err(FrlError::NoData {
                kind: FactorKind::Reward,
                factor: i,
                row: z,
            });
        }
        Ok(f.sums[z] / f.counts[z] as f64)
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            schema_version: STATS_SCHEMA_VERSION,
            stats: self.clone(),
        }
    }
}

/// Versioned JSON form of [`FactorStats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub schema_version: u32,
    pub stats: FactorStats,
}

impl StatsSnapshot {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: StatsSnapshot = serde_json::from_str(text)?;
        if snap.schema_version != STATS_SCHEMA_VERSION {
            return Err(FrlError::Parameter(format!(
                "stats snapshot schema {} is not supported (expected {STATS_SCHEMA_VERSION})",
                snap.schema_version
            )));
        }
        Ok(snap)
    }
}

fn check_confidence_args(k: usize, delta: f64, domain_size: usize) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(FrlError::Parameter(format!("δ = {delta} must lie in (0, 1)")));
    }
    if k == 0 {
        return Err(FrlError::Parameter("episode index must be at least 1".into()));
    }
    if domain_size == 0 {
        return Err(FrlError::Parameter("domain size must be at least 1".into()));
    }
    Ok(())
}

/// `4σ² ln(4 l |X[Z]| k / δ)`.
pub fn d_reward(k: usize, sigma: f64, l: usize, domain_size: usize, delta: f64) -> Result<f64> {
    check_confidence_args(k, delta, domain_size)?;
    Ok(4.0 * sigma * sigma * (4.0 * l as f64 * domain_size as f64 * k as f64 / delta).ln())
}

/// `4|S_j| ln(4 m |X[Z]| k / δ)`.
pub fn d_transition(
    k: usize,
    outcome_count: usize,
    m: usize,
    domain_size: usize,
    delta: f64,
) -> Result<f64> {
    check_confidence_args(k, delta, domain_size)?;
    Ok(4.0 * outcome_count as f64 * (4.0 * m as f64 * domain_size as f64 * k as f64 / delta).ln())
}

/// `√(d / n)`, infinite when `n = 0`.
pub fn radius(d: f64, n: u64) -> f64 {
    if n == 0 {
        f64::INFINITY
    } else {
        (d / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfidence {
    /// Empirical means; zero for unvisited rows.
    pub means: Vec<f64>,
    pub counts: Vec<u64>,
    pub d: f64,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionConfidence {
    /// Empirical rows; uniform for unvisited rows.
    pub rows: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
    pub d: f64,
    pub radii: Vec<f64>,
}

/// The set of factored MDPs whose factors lie within the per-row balls
/// around the empirical estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceFamily {
    pub structure: GraphStructure,
    pub episode: usize,
    pub delta: f64,
    pub reward: Vec<RewardConfidence>,
    pub transition: Vec<TransitionConfidence>,
}

impl ConfidenceFamily {
    /// Family for episode `k` from counts frozen at the episode start.
    pub fn build(stats: &FactorStats, structure: &GraphStructure, k: usize, delta: f64) -> Result<Self> {
        let l = structure.num_reward_factors();
        let m = structure.num_state_factors();
        let reward = stats
            .reward
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let d = d_reward(k, structure.reward_noise, l, structure.reward_domain_size(i), delta)?;
                Ok(RewardConfidence {
                    means: f
                        .sums
                        .iter()
                        .zip(&f.counts)
                        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
                        .collect(),
                    counts: f.counts.clone(),
                    d,
                    radii: f.counts.iter().map(|&n| radius(d, n)).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let transition = stats
            .transition
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let outcomes = structure.state_factor_sizes[j];
                let d = d_transition(k, outcomes, m, structure.transition_domain_size(j), delta)?;
                Ok(TransitionConfidence {
                    rows: f
                        .outcomes
                        .iter()
                        .zip(&f.counts)
                        .map(|(o, &n)| {
                            if n == 0 {
                                vec![1.0 / outcomes as f64; outcomes]
                            } else {
                                o.iter().map(|&c| c as f64 / n as f64).collect()
                            }
                        })
                        .collect(),
                    counts: f.counts.clone(),
                    d,
                    radii: f.counts.iter().map(|&n| radius(d, n)).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConfidenceFamily {
            structure: structure.clone(),
            episode: k,
            delta,
            reward,
            transition,
        })
    }

    /// Same centers with every radius multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = self.clone();
        for f in &mut out.reward {
            f.radii.iter_mut().for_each(|r| *r *= scale);
        }
        for f in &mut out.transition {
            f.radii.iter_mut().for_each(|r| *r *= scale);
        }
        out
    }

    pub fn radius(&self, kind: FactorKind, factor: usize, z: usize) -> f64 {
        match kind {
            FactorKind::Reward => self.reward[factor].radii[z],
            FactorKind::Transition => self.transition[factor].radii[z],
        }
    }
}

/// A confidence constraint that a model breaks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    pub kind: FactorKind,
    pub factor: usize,
    pub row: usize,
    pub deviation: f64,
    pub radius: f64,
}

impl std::fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} factor {} row {}: deviation {} exceeds radius {}",
            self.kind, self.factor, self.row, self.deviation, self.radius
        )
    }
}

/// `None` when `mdp` is a member of `family`, otherwise the first broken
/// constraint (reward factors first, then transition factors, rows in order).
pub fn contains(family: &ConfidenceFamily, mdp: &FactoredMdp) -> Result<Option<ConstraintViolation>> {
    if family.structure != mdp.structure {
        return Err(FrlError::Structure(
            "model structure differs from the family's structure".into(),
        ));
    }
    for (i, f) in family.reward.iter().enumerate() {
        for z in 0..f.counts.len() {
            if f.counts[z] == 0 {
                continue;
            }
            let deviation = (mdp.reward_factors[i][z] - f.means[z]).abs();
            if deviation > f.radii[z] + CONTAIN_TOL {
                return Ok(Some(ConstraintViolation {
                    kind: FactorKind::Reward,
                    factor: i,
                    row: z,
                    deviation,
                    radius: f.radii[z],
                }));
            }
        }
    }
    for (j, f) in family.transition.iter().enumerate() {
        for z in 0..f.counts.len() {
            if f.counts[z] == 0 {
                continue;
            }
            let deviation = l1(&mdp.transition_factors[j][z], &f.rows[z]);
            if deviation > f.radii[z] + CONTAIN_TOL {
                return Ok(Some(ConstraintViolation {
                    kind: FactorKind::Transition,
                    factor: j,
                    row: z,
                    deviation,
                    radius: f.radii[z],
                }));
            }
        }
    }
    Ok(None)
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Diameter of a factor's function class under its confidence norm.
pub fn class_cap(structure: &GraphStructure, kind: FactorKind) -> f64 {
    match kind {
        FactorKind::Reward => structure.reward_mean_bound,
        FactorKind::Transition => 2.0,
    }
}

/// Width of a ball-shaped confidence set: twice its radius, capped at the
/// class diameter.
pub fn width_of(radius: f64, cap: f64) -> f64 {
    (2.0 * radius).min(cap)
}

pub fn width(family: &ConfidenceFamily, kind: FactorKind, factor: usize, z: usize) -> f64 {
    width_of(family.radius(kind, factor, z), class_cap(&family.structure, kind))
}

/// `exp(|Y| ln 2 − n ε² / 2)`, uncapped.
pub fn weissman_bound(outcome_count: usize, n: u64, epsilon: f64) -> f64 {
    (outcome_count as f64 * std::f64::consts::LN_2 - n as f64 * epsilon * epsilon / 2.0).exp()
}

/// `exp(ln 2 − n β² / (2σ²))`.
pub fn subgaussian_tail_bound(n: u64, beta: f64, sigma: f64) -> f64 {
    (std::f64::consts::LN_2 - n as f64 * beta * beta / (2.0 * sigma * sigma)).exp()
}

/// Both sides of the width-sum inequality for one factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthAudit {
    pub empirical: f64,
    pub bound: f64,
    pub steps: usize,
}

impl WidthAudit {
    pub fn holds(&self) -> bool {
        self.empirical <= self.bound
    }
}

/// Replays a per-episode log of scoped rows. Each episode's widths use the
/// counts frozen at its start and the final parameter `d_T`.
pub fn width_sum_audit(
    visits: &[Vec<usize>],
    d_final: f64,
    domain_size: usize,
    cap: f64,
    horizon: usize,
) -> WidthAudit {
    let mut counts = vec![0u64; domain_size];
    let mut empirical = 0.0;
    let mut steps = 0;
    for episode in visits {
        for &z in episode {
            empirical += width_of(radius(d_final, counts[z]), cap);
        }
        for &z in episode {
            counts[z] += 1;
        }
        steps += episode.len();
    }
    WidthAudit {
        empirical,
        bound: width_sum_bound(horizon, cap, domain_size, d_final, steps),
        steps,
    }
}

/// Number of episode-steps whose radius exceeds `epsilon`, and the bound
/// `(d_T / (τ ε²) + 1) · 2τ|X|` it must stay strictly below.
pub fn large_radius_audit(
    visits: &[Vec<usize>],
    d_final: f64,
    domain_size: usize,
    horizon: usize,
    epsilon: f64,
) -> (usize, f64) {
    let mut counts = vec![0u64; domain_size];
    let mut large = 0;
    for episode in visits {
        large += episode
            .iter()
            .filter(|&&z| radius(d_final, counts[z]) > epsilon)
            .count();
        for &z in episode {
            counts[z] += 1;
        }
    }
    let tau = horizon as f64;
    let bound = (d_final / (tau * epsilon * epsilon) + 1.0) * 2.0 * tau * domain_size as f64;
    (large, bound)
}
