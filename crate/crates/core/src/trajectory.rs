//! Recorded interaction: one entry per time step, in flat indices.

use serde::{Deserialize, Serialize};

use crate::error::FactorKind;
use crate::fmdp::FlatIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    /// One observation per reward factor.
    pub rewards: Vec<f64>,
    pub next_state: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<Step>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().flat_map(|s| s.rewards.iter()).sum()
    }
}

/// Scoped row visited by each step, per episode, for one factor.
pub fn scoped_visits(
    index: &FlatIndex,
    episodes: &[EpisodeLog],
    kind: FactorKind,
    factor: usize,
) -> Vec<Vec<usize>> {
    episodes
        .iter()
        .map(|ep| {
            ep.steps
                .iter()
                .map(|st| {
                    let pair = index.pair(st.state, st.action);
                    match kind {
                        FactorKind::Reward => index.reward_row(factor, pair),
                        FactorKind::Transition => index.transition_row(factor, pair),
                    }
                })
                .collect()
        })
        .collect()
}
