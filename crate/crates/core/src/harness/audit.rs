//! Offline replays of logged runs: width sums and confidence coverage.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{FactorKind, FrlError, Result};
use crate::estimation::{class_cap, contains, d_reward, d_transition, width_of, width_sum_audit, radius, ConfidenceFamily, FactorStats, WidthAudit};
use crate::fmdp::{FactoredMdp, FlatIndex, GraphStructure};
use crate::par::{self, Execution};
use crate::trajectory::{scoped_visits, EpisodeLog};

/// Final-episode confidence parameter `d_T` of one factor.
pub fn final_d(structure: &GraphStructure, kind: FactorKind, factor: usize, episodes: usize, delta: f64) -> Result<f64> {
    let k = episodes.max(1);
    match kind {
        FactorKind::Reward => d_reward(
            k,
            structure.reward_noise,
            structure.num_reward_factors(),
            structure.reward_domain_size(factor),
            delta,
        ),
        FactorKind::Transition => d_transition(
            k,
            structure.state_factor_sizes[factor],
            structure.num_state_factors(),
            structure.transition_domain_size(factor),
            delta,
        ),
    }
}

fn factors(structure: &GraphStructure) -> impl Iterator<Item = (FactorKind, usize)> {
    (0..structure.num_reward_factors())
        .map(|i| (FactorKind::Reward, i))
        .chain((0..structure.num_state_factors()).map(|j| (FactorKind::Transition, j)))
}

/// Cumulative `(reward, transition)` width sums after each episode, summed
/// over factors. Widths use the final `d_T` and the counts at the start of
/// each episode.
pub fn width_sums(structure: &GraphStructure, index: &FlatIndex, logs: &[EpisodeLog], delta: f64) -> Result<Vec<(f64, f64)>> {
    let mut reward = vec![0.0; logs.len()];
    let mut transition = vec![0.0; logs.len()];
    for (kind, factor) in factors(structure) {
        let d = final_d(structure, kind, factor, logs.len(), delta)?;
        let cap = class_cap(structure, kind);
        let domain = match kind {
            FactorKind::Reward => structure.reward_domain_size(factor),
            FactorKind::Transition => structure.transition_domain_size(factor),
        };
        let target = match kind {
            FactorKind::Reward => &mut reward,
            FactorKind::Transition => &mut transition,
        };
        let mut counts = vec![0u64; domain];
        for (k, episode) in scoped_visits(index, logs, kind, factor).iter().enumerate() {
            target[k] += episode.iter().map(|&z| width_of(radius(d, counts[z]), cap)).sum::<f64>();
            for &z in episode {
                counts[z] += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(logs.len());
    let (mut r, mut t) = (0.0, 0.0);
    for k in 0..logs.len() {
        r += reward[k];
        t += transition[k];
        out.push((r, t));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorWidthCheck {
    pub kind: FactorKind,
    pub factor: usize,
    #[serde(flatten)]
    pub audit: WidthAudit,
}

/// The pathwise width-sum inequality for every factor of one run.
pub fn width_inequality_checks(
    structure: &GraphStructure,
    index: &FlatIndex,
    logs: &[EpisodeLog],
    delta: f64,
) -> Result<Vec<FactorWidthCheck>> {
    factors(structure)
        .map(|(kind, factor)| {
            let d = final_d(structure, kind, factor, logs.len(), delta)?;
            let domain = match kind {
                FactorKind::Reward => structure.reward_domain_size(factor),
                FactorKind::Transition => structure.transition_domain_size(factor),
            };
            let visits = scoped_visits(index, logs, kind, factor);
            Ok(FactorWidthCheck {
                kind,
                factor,
                audit: width_sum_audit(&visits, d, domain, class_cap(structure, kind), structure.horizon),
            })
        })
        .collect()
}

/// Whether the true model lies in every episode's confidence family,
/// rebuilt from the log with radii multiplied by `scale`.
pub fn covered_throughout(env: &FactoredMdp, logs: &[EpisodeLog], delta: f64, scale: f64, cap: usize) -> Result<bool> {
    let index = FlatIndex::new(&env.structure, cap)?;
    let mut stats = FactorStats::new(&env.structure);
    for (k, log) in logs.iter().enumerate() {
        let family = ConfidenceFamily::build(&stats, &env.structure, k + 1, delta)?.scaled(scale);
        if contains(&family, env)?.is_some() {
            return Ok(false);
        }
        stats.record_episode(&index, log);
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub runs: usize,
    pub covered: usize,
    pub fraction: f64,
    /// `√(p(1 − p)/n)` at the observed fraction.
    pub std_error: f64,
    /// One-sided 95% Clopper–Pearson lower limit.
    pub lower_limit: f64,
}

/// One-sided Clopper–Pearson lower confidence limit for a binomial
/// proportion.
pub fn clopper_pearson_lower(successes: usize, trials: usize, alpha: f64) -> Result<f64> {
    if successes > trials || trials == 0 {
        return Err(FrlError::Parameter(format!("{successes} successes in {trials} trials")));
    }
    if successes == 0 {
        return Ok(0.0);
    }
    let beta = Beta::new(successes as f64, (trials - successes + 1) as f64)
        .map_err(|e| FrlError::Parameter(e.to_string()))?;
    Ok(beta.inverse_cdf(alpha))
}

/// Fraction of runs whose true model stays inside every episode's family.
/// Runs are replayed independently, concurrently when `execution` allows.
pub fn coverage_audit(
    runs: &[(&FactoredMdp, &[EpisodeLog])],
    delta: f64,
    scale: f64,
    cap: usize,
    execution: Execution,
) -> Result<CoverageReport> {
    if runs.is_empty() {
        return Err(FrlError::Audit("no runs to audit".into()));
    }
    let flags = par::map_range(execution, runs.len(), |i| covered_throughout(runs[i].0, runs[i].1, delta, scale, cap));
    let mut covered = 0;
    for flag in flags {
        if flag? {
            covered += 1;
        }
    }
    let n = runs.len();
    let p = covered as f64 / n as f64;
    Ok(CoverageReport {
        runs: n,
        covered,
        fraction: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        lower_limit: clopper_pearson_lower(covered, n, 0.05)?,
    })
}
