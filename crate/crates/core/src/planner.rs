//! Exact finite-horizon planning on tabular MDPs and optimistic planning
//! over factored confidence families.

use serde::{Deserialize, Serialize};

use crate::error::{FrlError, Result};
use crate::estimation::ConfidenceFamily;
use crate::fmdp::{FactoredMdp, FlatIndex, TabularMdp};

/// Deterministic non-stationary policy: one action per `(step, state)`.
/// Steps are zero-based, `0..horizon`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub num_states: usize,
    pub horizon: usize,
    actions: Vec<usize>,
}

impl Policy {
    pub fn from_actions(num_states: usize, horizon: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != num_states * horizon {
            return Err(FrlError::Structure(format!(
                "policy needs {} entries, got {}",
                num_states * horizon,
                actions.len()
            )));
        }
        Ok(Policy {
            num_states,
            horizon,
            actions,
        })
    }

    /// The same action everywhere.
    pub fn constant(num_states: usize, horizon: usize, action: usize) -> Self {
        Policy {
            num_states,
            horizon,
            actions: vec![action; num_states * horizon],
        }
    }

    #[inline]
    pub fn action(&self, state: usize, step: usize) -> usize {
        self.actions[step * self.num_states + state]
    }

    pub fn set(&mut self, state: usize, step: usize, action: usize) {
        self.actions[step * self.num_states + state] = action;
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// True when every entry is below `num_actions`.
    pub fn is_valid_for(&self, num_actions: usize) -> bool {
        self.actions.iter().all(|&a| a < num_actions)
    }
}

/// `V_i(s)` for steps `0..=horizon`; the last step is identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub num_states: usize,
    pub horizon: usize,
    values: Vec<f64>,
}

impl ValueTable {
    fn zeros(num_states: usize, horizon: usize) -> Self {
        ValueTable {
            num_states,
            horizon,
            values: vec![0.0; num_states * (horizon + 1)],
        }
    }

    pub fn step(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_states..(i + 1) * self.num_states]
    }

    fn step_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.num_states..(i + 1) * self.num_states]
    }

    /// Values at the first step of an episode.
    pub fn initial(&self) -> &[f64] {
        self.step(0)
    }

    /// `Σ_s ρ(s) V_1(s)`.
    pub fn expected_initial(&self, rho: &[f64]) -> f64 {
        rho.iter().zip(self.initial()).map(|(p, v)| p * v).sum()
    }
}

/// `R̄(·, a) + P(·, a) V`.
pub fn bellman_backup(mdp: &TabularMdp, action: usize, v: &[f64]) -> Vec<f64> {
    (0..mdp.num_states)
        .map(|s| mdp.reward(s, action) + dot(mdp.row(s, action), v))
        .collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact backward induction. Ties go to the lowest action index.
pub fn value_iteration(mdp: &TabularMdp) -> (ValueTable, Policy) {
    let (ns, na, tau) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut values = ValueTable::zeros(ns, tau);
    let mut policy = Policy::constant(ns, tau, 0);
    for i in (0..tau).rev() {
        let (head, tail) = values.values.split_at_mut((i + 1) * ns);
        let next = &tail[..ns];
        let current = &mut head[i * ns..];
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..na {
                let q = mdp.reward(s, a) + dot(mdp.row(s, a), next);
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            current[s] = best;
            policy.set(s, i, best_a);
        }
    }
    (values, policy)
}

/// `Γ(M, ε)`. Planning is exact, so any `ε ≥ 0` is met.
pub fn plan(mdp: &TabularMdp, epsilon: f64) -> (ValueTable, Policy) {
    debug_assert!(epsilon >= 0.0);
    value_iteration(mdp)
}

/// Exact evaluation of a fixed policy by backward induction.
pub fn policy_value(mdp: &TabularMdp, policy: &Policy) -> ValueTable {
    let (ns, tau) = (mdp.num_states, mdp.horizon);
    let mut values = ValueTable::zeros(ns, tau);
    for i in (0..tau).rev() {
        let (head, tail) = values.values.split_at_mut((i + 1) * ns);
        let next = &tail[..ns];
        for (s, slot) in head[i * ns..].iter_mut().enumerate() {
            let a = policy.action(s, i);
            *slot = mdp.reward(s, a) + dot(mdp.row(s, a), next);
        }
    }
    values
}

/// `max V − min V`; zero for an empty slice.
pub fn span(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Maximizes `p · v` over the simplex intersected with the L1 ball of the
/// given radius around `p_hat`: up to `radius / 2` mass moves onto the best
/// outcome, taken from the worst outcomes first.
pub fn optimistic_factor_reallocate(p_hat: &[f64], radius: f64, v: &[f64]) -> Vec<f64> {
    let mut p = p_hat.to_vec();
    reallocate_into(&mut p, radius, v, &mut Vec::new());
    p
}

fn reallocate_into(p: &mut [f64], radius: f64, v: &[f64], order: &mut Vec<usize>) {
    if p.is_empty() {
        return;
    }
    let mut best = 0;
    for (y, &val) in v.iter().enumerate() {
        if val > v[best] {
            best = y;
        }
    }
    if radius / 2.0 >= 1.0 - p[best] {
        p.fill(0.0);
        p[best] = 1.0;
        return;
    }
    let budget = radius / 2.0;
    if !(budget > 0.0) {
        return;
    }
    p[best] += budget;
    order.clear();
    order.extend(0..p.len());
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut excess = budget;
    for &y in order.iter() {
        if y == best {
            continue;
        }
        let take = p[y].min(excess);
        p[y] -= take;
        excess -= take;
        if excess <= 0.0 {
            break;
        }
    }
}

/// Result of optimistic planning over a confidence family.
#[derive(Debug, Clone)]
pub struct OptimisticPlan {
    pub policy: Policy,
    /// Optimistic values from the per-`(x, step)` inner maximization.
    pub values: ValueTable,
    /// A member of the family: optimistic reward means, and for each
    /// transition row the distribution chosen at the first step for the
    /// lowest-indexed state-action pair reaching that row.
    pub model: FactoredMdp,
}

/// How the transition factors are chosen at each `(x, step)` backup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InnerSolver {
    /// Starting from the empirical rows, each factor in turn moves within
    /// its L1 ball to best respond to the continuation value marginalized
    /// over the other factors' current choices, for `sweeps` passes.
    CoordinateAscent { sweeps: usize },
    /// Maximizes over every combination of per-factor candidate vertices.
    /// Some joint maximizer has each factor at the reallocation of its
    /// centre under some outcome ordering, so this is exact. Factors are
    /// limited to `EXACT_MAX_OUTCOMES` outcomes.
    Exact,
}

impl Default for InnerSolver {
    fn default() -> Self {
        InnerSolver::CoordinateAscent { sweeps: 1 }
    }
}

pub const EXACT_MAX_OUTCOMES: usize = 8;
const EXACT_MAX_COMBINATIONS: usize = 1 << 20;

/// Optimistic backward induction over a factored confidence family.
///
/// At each `(x, step)` the reward is `Σ_i clip(mean + radius, 0, C)` and the
/// transition factors are chosen by `solver`.
pub fn extended_value_iteration(
    family: &ConfidenceFamily,
    index: &FlatIndex,
    initial_distribution: &[f64],
    solver: InnerSolver,
) -> Result<OptimisticPlan> {
    let g = &family.structure;
    let ns = index.num_states();
    let na = index.num_actions();
    let m = g.num_state_factors();
    let tau = g.horizon;
    let c = g.reward_mean_bound;

    let optimistic_reward: Vec<f64> = (0..index.num_pairs())
        .map(|pair| {
            family
                .reward
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let z = index.reward_row(i, pair);
                    (f.means[z] + f.radii[z]).clamp(0.0, c)
                })
                .sum()
        })
        .collect();

    let mut values = ValueTable::zeros(ns, tau);
    let mut policy = Policy::constant(ns, tau, 0);
    let mut chosen: Vec<Vec<Option<Vec<f64>>>> = (0..m)
        .map(|j| vec![None; family.transition[j].rows.len()])
        .collect();

    let mut inner = InnerMax::new(index);
    let candidates = match solver {
        InnerSolver::Exact => Some(vertex_candidates(family)?),
        InnerSolver::CoordinateAscent { .. } => None,
    };
    let mut candidate: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in (0..tau).rev() {
        let next = values.step(i + 1).to_vec();
        let current = values.step_mut(i);
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..na {
                let pair = index.pair(s, a);
                candidate.clear();
                for (j, f) in family.transition.iter().enumerate() {
                    candidate.push(f.rows[index.transition_row(j, pair)].clone());
                }
                let radii: Vec<f64> = family
                    .transition
                    .iter()
                    .enumerate()
                    .map(|(j, f)| f.radii[index.transition_row(j, pair)])
                    .collect();
                match (solver, &candidates) {
                    (InnerSolver::Exact, Some(sets)) => {
                        let rows: Vec<&[Vec<f64>]> = (0..m)
                            .map(|j| sets[j][index.transition_row(j, pair)].as_slice())
                            .collect();
                        inner.exhaust(&rows, &next, &mut candidate);
                    }
                    (InnerSolver::CoordinateAscent { sweeps }, _) => {
                        for _ in 0..sweeps {
                            for j in 0..m {
                                inner.best_respond(&mut candidate, j, radii[j], &next);
                            }
                        }
                    }
                    (InnerSolver::Exact, None) => unreachable!(),
                }
                let q = optimistic_reward[pair] + inner.expectation(&candidate, &next);
                if q > best {
                    best = q;
                    best_a = a;
                }
                if i == 0 {
                    for (j, row) in candidate.iter().enumerate() {
                        let z = index.transition_row(j, pair);
                        if chosen[j][z].is_none() {
                            chosen[j][z] = Some(row.clone());
                        }
                    }
                }
            }
            current[s] = best;
            policy.set(s, i, best_a);
        }
    }

    let reward_factors = family
        .reward
        .iter()
        .map(|f| {
            f.means
                .iter()
                .zip(&f.radii)
                .map(|(mean, r)| (mean + r).clamp(0.0, c))
                .collect()
        })
        .collect();
    let transition_factors = chosen
        .into_iter()
        .enumerate()
        .map(|(j, rows)| {
            rows.into_iter()
                .enumerate()
                .map(|(z, row)| row.unwrap_or_else(|| family.transition[j].rows[z].clone()))
                .collect()
        })
        .collect();
    let model = FactoredMdp::new(
        g.clone(),
        reward_factors,
        transition_factors,
        initial_distribution.to_vec(),
    )?;
    Ok(OptimisticPlan {
        policy,
        values,
        model,
    })
}

/// Distinct reallocations of `p_hat` over every ordering of its outcomes.
fn row_candidates(p_hat: &[f64], radius: f64) -> Vec<Vec<f64>> {
    let n = p_hat.len();
    if radius <= 0.0 || n <= 1 {
        return vec![p_hat.to_vec()];
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut ranks = vec![0.0; n];
    let mut push = |perm: &[usize], out: &mut Vec<Vec<f64>>| {
        for (rank, &y) in perm.iter().enumerate() {
            ranks[y] = rank as f64;
        }
        let p = optimistic_factor_reallocate(p_hat, radius, &ranks);
        if !out.contains(&p) {
            out.push(p);
        }
    };
    // Heap's algorithm
    let mut c = vec![0usize; n];
    push(&perm, &mut out);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            push(&perm, &mut out);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Candidate rows per transition factor and scoped row.
fn vertex_candidates(family: &ConfidenceFamily) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
    let mut combinations = 1usize;
    let sets = family
        .transition
        .iter()
        .map(|f| {
            if f.rows.first().map_or(0, Vec::len) > EXACT_MAX_OUTCOMES {
                return Err(FrlError::Parameter(format!(
                    "exact optimistic planning supports at most {EXACT_MAX_OUTCOMES} outcomes per factor"
                )));
            }
            let rows: Vec<Vec<Vec<f64>>> = f
                .rows
                .iter()
                .zip(&f.radii)
                .map(|(row, &r)| row_candidates(row, r))
                .collect();
            let widest = rows.iter().map(Vec::len).max().unwrap_or(1);
            combinations = combinations.saturating_mul(widest);
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    if combinations > EXACT_MAX_COMBINATIONS {
        return Err(FrlError::Parameter(format!(
            "exact optimistic planning would enumerate {combinations} combinations per backup"
        )));
    }
    Ok(sets)
}

/// Scratch space for the per-pair inner maximization.
struct InnerMax<'a> {
    index: &'a FlatIndex,
    marginal: Vec<f64>,
    order: Vec<usize>,
}

impl<'a> InnerMax<'a> {
    fn new(index: &'a FlatIndex) -> Self {
        InnerMax {
            index,
            marginal: Vec::new(),
            order: Vec::new(),
        }
    }

    /// `Σ_{s'} ∏_k q_k(s'[k]) V(s')`.
    fn expectation(&self, rows: &[Vec<f64>], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for (s2, &val) in v.iter().enumerate() {
            let coords = self.index.state_coords(s2);
            let mut w = 1.0;
            for (row, &y) in rows.iter().zip(coords) {
                w *= row[y];
            }
            total += w * val;
        }
        total
    }

    /// Writes the best combination of candidate rows into `best`.
    fn exhaust(&self, sets: &[&[Vec<f64>]], v: &[f64], best: &mut Vec<Vec<f64>>) {
        let m = sets.len();
        let mut choice = vec![0usize; m];
        let mut rows: Vec<Vec<f64>> = sets.iter().map(|s| s[0].clone()).collect();
        let mut best_value = f64::NEG_INFINITY;
        loop {
            let value = self.expectation(&rows, v);
            if value > best_value {
                best_value = value;
                best.clone_from(&rows);
            }
            // odometer over candidate indices
            let mut j = 0;
            while j < m {
                choice[j] += 1;
                if choice[j] < sets[j].len() {
                    rows[j].clone_from(&sets[j][choice[j]]);
                    break;
                }
                choice[j] = 0;
                rows[j].clone_from(&sets[j][0]);
                j += 1;
            }
            if j == m {
                break;
            }
        }
    }

    fn best_respond(&mut self, rows: &mut [Vec<f64>], j: usize, radius: f64, v: &[f64]) {
        self.marginal.clear();
        self.marginal.resize(rows[j].len(), 0.0);
        for (s2, &val) in v.iter().enumerate() {
            let coords = self.index.state_coords(s2);
            let mut w = 1.0;
            for (k, (row, &y)) in rows.iter().zip(coords).enumerate() {
                if k != j {
                    w *= row[y];
                }
            }
            self.marginal[coords[j]] += w * val;
        }
        reallocate_into(&mut rows[j], radius, &self.marginal, &mut self.order);
    }
}
