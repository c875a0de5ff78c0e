//! Factored sets, factored MDPs, sampling, and flattening to tabular form.
//!
//! The combined state-action space `X = S × A` is a factored set
//! `X_0 × … × X_{n-1}`. State factors occupy indices `0..m`, action factors
//! the remaining `m..n`. Every table indexed by a scoped value uses
//! row-major mixed-radix encoding: the last scope index varies fastest.
//! Flattened states and actions follow the same convention.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FactorKind, FrlError, Result};

/// Default limit on flattened state-action pairs.
pub const DEFAULT_CAP: usize = 1_000_000;

/// Tolerance for simplex and bound checks.
pub const PROB_TOL: f64 = 1e-9;

/// A sorted, duplicate-free set of indices into the combined factored set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Scope(Vec<usize>);

impl Scope {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(FrlError::Structure(format!(
                "scope contains index {} more than once",
                w[0]
            )));
        }
        Ok(Scope(indices))
    }

    /// The scope covering indices `0..n`.
    pub fn full(n: usize) -> Self {
        Scope((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for Scope {
    type Error = FrlError;

    fn try_from(value: Vec<usize>) -> Result<Self> {
        Scope::new(value)
    }
}

impl From<Scope> for Vec<usize> {
    fn from(value: Scope) -> Self {
        value.0
    }
}

/// A point of a factored set: one coordinate per factor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactoredVector(Vec<usize>);

impl FactoredVector {
    pub fn new(coords: Vec<usize>) -> Self {
        FactoredVector(coords)
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl From<Vec<usize>> for FactoredVector {
    fn from(value: Vec<usize>) -> Self {
        FactoredVector(value)
    }
}

/// Restricts `x` to the coordinates named by `scope`, in ascending index order.
pub fn scope_project(x: &FactoredVector, scope: &Scope) -> Result<FactoredVector> {
    scope
        .indices()
        .iter()
        .map(|&i| {
            x.0.get(i).copied().ok_or_else(|| {
                FrlError::Structure(format!(
                    "scope index {i} out of range for a vector of length {}",
                    x.len()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(FactoredVector)
}

/// Row-major mixed-radix encoding of `coords` with the given radices.
pub fn mixed_radix_index(coords: &[usize], radices: &[usize]) -> Result<usize> {
    if coords.len() != radices.len() {
        return Err(FrlError::Structure(format!(
            "expected {} coordinates, got {}",
            radices.len(),
            coords.len()
        )));
    }
    let mut index = 0usize;
    for (pos, (&c, &r)) in coords.iter().zip(radices).enumerate() {
        if c >= r {
            return Err(FrlError::Structure(format!(
                "coordinate {pos} has value {c}, factor size is {r}"
            )));
        }
        index = index
            .checked_mul(r)
            .and_then(|v| v.checked_add(c))
            .ok_or_else(|| FrlError::Structure("mixed-radix index overflow".into()))?;
    }
    Ok(index)
}

/// Inverse of [`mixed_radix_index`].
pub fn mixed_radix_unindex(mut index: usize, radices: &[usize]) -> Result<Vec<usize>> {
    let total = checked_product(radices)
        .ok_or_else(|| FrlError::Structure("mixed-radix domain overflow".into()))?;
    if index >= total {
        return Err(FrlError::Structure(format!(
            "flat index {index} out of range for a domain of size {total}"
        )));
    }
    let mut coords = vec![0; radices.len()];
    for (slot, &r) in coords.iter_mut().zip(radices).rev() {
        *slot = index % r;
        index /= r;
    }
    Ok(coords)
}

fn checked_product(sizes: &[usize]) -> Option<usize> {
    sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s))
}

/// The graph structure of a factored MDP: factor sizes, scopes, horizon and
/// reward class parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStructure {
    pub state_factor_sizes: Vec<usize>,
    /// Sizes of every factor of `X = S × A`; the first `m` entries repeat
    /// `state_factor_sizes`.
    #[serde(rename = "action_combined_factor_sizes")]
    pub combined_factor_sizes: Vec<usize>,
    pub reward_scopes: Vec<Scope>,
    pub transition_scopes: Vec<Scope>,
    pub horizon: usize,
    pub reward_mean_bound: f64,
    pub reward_noise: f64,
}

impl GraphStructure {
    pub fn new(
        state_factor_sizes: Vec<usize>,
        combined_factor_sizes: Vec<usize>,
        reward_scopes: Vec<Scope>,
        transition_scopes: Vec<Scope>,
        horizon: usize,
        reward_mean_bound: f64,
        reward_noise: f64,
    ) -> Result<Self> {
        let g = GraphStructure {
            state_factor_sizes,
            combined_factor_sizes,
            reward_scopes,
            transition_scopes,
            horizon,
            reward_mean_bound,
            reward_noise,
        };
        let violations = g.violations();
        if violations.is_empty() {
            Ok(g)
        } else {
            Err(FrlError::InvalidModel(violations))
        }
    }

    /// Number of state factors `m`.
    pub fn num_state_factors(&self) -> usize {
        self.state_factor_sizes.len()
    }

    /// Number of combined factors `n`.
    pub fn num_factors(&self) -> usize {
        self.combined_factor_sizes.len()
    }

    /// Number of reward factors `l`.
    pub fn num_reward_factors(&self) -> usize {
        self.reward_scopes.len()
    }

    pub fn action_factor_sizes(&self) -> &[usize] {
        &self.combined_factor_sizes[self.num_state_factors().min(self.num_factors())..]
    }

    pub fn scope_sizes(&self, scope: &Scope) -> Vec<usize> {
        scope
            .indices()
            .iter()
            .map(|&i| self.combined_factor_sizes[i])
            .collect()
    }

    /// `|X[Z]|`.
    pub fn scope_domain_size(&self, scope: &Scope) -> Result<usize> {
        checked_product(&self.scope_sizes(scope))
            .ok_or_else(|| FrlError::Structure("scope domain size overflows".into()))
    }

    pub fn reward_domain_size(&self, i: usize) -> usize {
        self.scope_domain_size(&self.reward_scopes[i])
            .expect("validated structure")
    }

    pub fn transition_domain_size(&self, j: usize) -> usize {
        self.scope_domain_size(&self.transition_scopes[j])
            .expect("validated structure")
    }

    pub fn num_states(&self) -> Result<usize> {
        checked_product(&self.state_factor_sizes)
            .ok_or_else(|| FrlError::Structure("state space size overflows".into()))
    }

    pub fn num_actions(&self) -> Result<usize> {
        checked_product(self.action_factor_sizes())
            .ok_or_else(|| FrlError::Structure("action space size overflows".into()))
    }

    /// Largest scope size `ζ`.
    pub fn max_scope_size(&self) -> usize {
        self.reward_scopes
            .iter()
            .chain(&self.transition_scopes)
            .map(Scope::len)
            .max()
            .unwrap_or(0)
    }

    /// Largest factor size `K`.
    pub fn max_factor_size(&self) -> usize {
        self.combined_factor_sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn scope_index(&self, x_scoped: &FactoredVector, scope: &Scope) -> Result<usize> {
        mixed_radix_index(x_scoped.coords(), &self.scope_sizes(scope))
    }

    pub fn scope_unindex(&self, index: usize, scope: &Scope) -> Result<FactoredVector> {
        mixed_radix_unindex(index, &self.scope_sizes(scope)).map(FactoredVector)
    }

    /// Row of the table for a scope, addressed by a full point of `X`.
    pub fn row_of(&self, x: &FactoredVector, scope: &Scope) -> Result<usize> {
        self.scope_index(&scope_project(x, scope)?, scope)
    }

    /// Every structural invariant that fails.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let m = self.num_state_factors();
        let n = self.num_factors();
        if m == 0 {
            out.push(Violation::NoStateFactors);
        }
        if n < m {
            out.push(Violation::FactorCount { states: m, combined: n });
        }
        for (i, &size) in self.combined_factor_sizes.iter().enumerate() {
            if size == 0 {
                out.push(Violation::EmptyFactor { factor: i });
            }
        }
        for (j, (&s, &c)) in self
            .state_factor_sizes
            .iter()
            .zip(&self.combined_factor_sizes)
            .enumerate()
        {
            if s != c {
                out.push(Violation::StateSizeMismatch {
                    factor: j,
                    state_size: s,
                    combined_size: c,
                });
            }
        }
        if self.transition_scopes.len() != m {
            out.push(Violation::TransitionScopeCount {
                expected: m,
                found: self.transition_scopes.len(),
            });
        }
        let scopes = self
            .reward_scopes
            .iter()
            .enumerate()
            .map(|(i, s)| (FactorKind::Reward, i, s))
            .chain(
                self.transition_scopes
                    .iter()
                    .enumerate()
                    .map(|(j, s)| (FactorKind::Transition, j, s)),
            );
        for (kind, factor, scope) in scopes {
            for &index in scope.indices() {
                if index >= n {
                    out.push(Violation::ScopeIndex {
                        kind,
                        factor,
                        index,
                        n,
                    });
                }
            }
        }
        if self.horizon == 0 {
            out.push(Violation::Horizon);
        }
        if !(self.reward_mean_bound > 0.0 && self.reward_mean_bound.is_finite()) {
            out.push(Violation::RewardBound(self.reward_mean_bound));
        }
        if !(self.reward_noise >= 0.0 && self.reward_noise.is_finite()) {
            out.push(Violation::RewardNoise(self.reward_noise));
        }
        if out.is_empty() {
            let states = checked_product(&self.state_factor_sizes);
            let actions = checked_product(self.action_factor_sizes());
            if states.zip(actions).and_then(|(s, a)| s.checked_mul(a)).is_none() {
                out.push(Violation::Overflow("flattened state-action space".into()));
            }
            for scope in self.reward_scopes.iter().chain(&self.transition_scopes) {
                if self.scope_domain_size(scope).is_err() {
                    out.push(Violation::Overflow(format!("scope {:?}", scope.indices())));
                }
            }
        }
        out
    }
}

/// A failed invariant of a structure or model.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoStateFactors,
    FactorCount { states: usize, combined: usize },
    EmptyFactor { factor: usize },
    StateSizeMismatch { factor: usize, state_size: usize, combined_size: usize },
    TransitionScopeCount { expected: usize, found: usize },
    ScopeIndex { kind: FactorKind, factor: usize, index: usize, n: usize },
    Horizon,
    RewardBound(f64),
    RewardNoise(f64),
    Overflow(String),
    TableCount { kind: FactorKind, expected: usize, found: usize },
    TableRows { kind: FactorKind, factor: usize, expected: usize, found: usize },
    RowLength { factor: usize, row: usize, expected: usize, found: usize },
    RowSum { factor: usize, row: usize, sum: f64 },
    NegativeProbability { factor: usize, row: usize, outcome: usize, value: f64 },
    RewardMean { factor: usize, row: usize, mean: f64, bound: f64 },
    InitialLength { expected: usize, found: usize },
    InitialSum(f64),
    InitialNegative { state: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoStateFactors => write!(f, "structure has no state factors"),
            FactorCount { states, combined } => write!(
                f,
                "{states} state factors but only {combined} combined factors"
            ),
            EmptyFactor { factor } => write!(f, "factor {factor} has size 0"),
            StateSizeMismatch {
                factor,
                state_size,
                combined_size,
            } => write!(
                f,
                "state factor {factor} has size {state_size} but combined factor {factor} has size {combined_size}"
            ),
            TransitionScopeCount { expected, found } => write!(
                f,
                "expected {expected} transition scopes (one per state factor), found {found}"
            ),
            ScopeIndex {
                kind,
                factor,
                index,
                n,
            } => write!(
                f,
                "{kind} scope {factor} names index {index}, outside 0..{n}"
            ),
            Horizon => write!(f, "horizon must be at least 1"),
            RewardBound(c) => write!(f, "reward mean bound {c} must be positive and finite"),
            RewardNoise(s) => write!(f, "reward noise {s} must be nonnegative and finite"),
            Overflow(what) => write!(f, "size of {what} overflows"),
            TableCount {
                kind,
                expected,
                found,
            } => write!(f, "expected {expected} {kind} tables, found {found}"),
            TableRows {
                kind,
                factor,
                expected,
                found,
            } => write!(
                f,
                "{kind} factor {factor} should have {expected} rows, found {found}"
            ),
            RowLength {
                factor,
                row,
                expected,
                found,
            } => write!(
                f,
                "transition factor {factor} row {row} has {found} entries, expected {expected}"
            ),
            RowSum { factor, row, sum } => write!(
                f,
                "transition factor {factor} row {row} sums to {sum}, not 1"
            ),
            NegativeProbability {
                factor,
                row,
                outcome,
                value,
            } => write!(
                f,
                "transition factor {factor} row {row} outcome {outcome} is negative ({value})"
            ),
            RewardMean {
                factor,
                row,
                mean,
                bound,
            } => write!(
                f,
                "reward factor {factor} row {row} has mean {mean} outside [0, {bound}]"
            ),
            InitialLength { expected, found } => write!(
                f,
                "initial distribution has {found} entries, expected {expected}"
            ),
            InitialSum(sum) => write!(f, "initial distribution sums to {sum}, not 1"),
            InitialNegative { state, value } => write!(
                f,
                "initial distribution entry {state} is negative ({value})"
            ),
        }
    }
}

/// Precomputed addressing between flattened `(s, a)` pairs and factor rows.
#[derive(Debug, Clone)]
pub struct FlatIndex {
    num_states: usize,
    num_actions: usize,
    state_radices: Vec<usize>,
    action_radices: Vec<usize>,
    state_coords: Vec<usize>,
    reward_rows: Vec<Vec<usize>>,
    transition_rows: Vec<Vec<usize>>,
}

impl FlatIndex {
    pub fn new(structure: &GraphStructure, cap: usize) -> Result<Self> {
        let violations = structure.violations();
        if !violations.is_empty() {
            return Err(FrlError::InvalidModel(violations));
        }
        let num_states = structure.num_states()?;
        let num_actions = structure.num_actions()?;
        let pairs = num_states as u128 * num_actions as u128;
        if pairs > cap as u128 {
            return Err(FrlError::Size {
                what: format!(
                    "flattened state-action space (|S| = {num_states} × |A| = {num_actions})"
                ),
                product: pairs,
                cap,
            });
        }
        let m = structure.num_state_factors();
        let state_radices = structure.state_factor_sizes.clone();
        let action_radices = structure.action_factor_sizes().to_vec();

        let mut state_coords = Vec::with_capacity(num_states * m);
        for s in 0..num_states {
            state_coords.extend(mixed_radix_unindex(s, &state_radices)?);
        }

        let n = structure.num_factors();
        let mut x = vec![0usize; n];
        let mut reward_rows = vec![Vec::with_capacity(num_states * num_actions); structure.num_reward_factors()];
        let mut transition_rows = vec![Vec::with_capacity(num_states * num_actions); m];
        let scope_radices = |scope: &Scope| structure.scope_sizes(scope);
        let reward_radices: Vec<_> = structure.reward_scopes.iter().map(scope_radices).collect();
        let transition_radices: Vec<_> =
            structure.transition_scopes.iter().map(scope_radices).collect();
        let mut scratch = Vec::with_capacity(n);
        for s in 0..num_states {
            x[..m].copy_from_slice(&state_coords[s * m..(s + 1) * m]);
            for a in 0..num_actions {
                let ac = mixed_radix_unindex(a, &action_radices)?;
                x[m..].copy_from_slice(&ac);
                for (i, scope) in structure.reward_scopes.iter().enumerate() {
                    scratch.clear();
                    scratch.extend(scope.indices().iter().map(|&k| x[k]));
                    reward_rows[i].push(mixed_radix_index(&scratch, &reward_radices[i])?);
                }
                for (j, scope) in structure.transition_scopes.iter().enumerate() {
                    scratch.clear();
                    scratch.extend(scope.indices().iter().map(|&k| x[k]));
                    transition_rows[j].push(mixed_radix_index(&scratch, &transition_radices[j])?);
                }
            }
        }
        Ok(FlatIndex {
            num_states,
            num_actions,
            state_radices,
            action_radices,
            state_coords,
            reward_rows,
            transition_rows,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_state_factors(&self) -> usize {
        self.state_radices.len()
    }

    pub fn state_factor_sizes(&self) -> &[usize] {
        &self.state_radices
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    #[inline]
    pub fn state_coords(&self, s: usize) -> &[usize] {
        let m = self.state_radices.len();
        &self.state_coords[s * m..(s + 1) * m]
    }

    #[inline]
    pub fn reward_row(&self, i: usize, pair: usize) -> usize {
        self.reward_rows[i][pair]
    }

    #[inline]
    pub fn transition_row(&self, j: usize, pair: usize) -> usize {
        self.transition_rows[j][pair]
    }

    pub fn state_index(&self, coords: &[usize]) -> Result<usize> {
        mixed_radix_index(coords, &self.state_radices)
    }

    /// The combined point `x = (s, a)`.
    pub fn point(&self, s: usize, a: usize) -> Result<FactoredVector> {
        let mut coords = self.state_coords(s).to_vec();
        coords.extend(mixed_radix_unindex(a, &self.action_radices)?);
        Ok(FactoredVector(coords))
    }

    /// Splits a combined point into flat state and action indices.
    pub fn split(&self, x: &FactoredVector) -> Result<(usize, usize)> {
        let m = self.state_radices.len();
        if x.len() != m + self.action_radices.len() {
            return Err(FrlError::Structure(format!(
                "point has {} coordinates, structure has {}",
                x.len(),
                m + self.action_radices.len()
            )));
        }
        let s = mixed_radix_index(&x.coords()[..m], &self.state_radices)?;
        let a = mixed_radix_index(&x.coords()[m..], &self.action_radices)?;
        Ok((s, a))
    }
}

/// Per-factor rewards and the next state drawn for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub rewards: Vec<f64>,
    pub total: f64,
    pub next_state: FactoredVector,
}

/// A factored MDP: structure, per-factor reward means (Gaussian noise with
/// the structure's `σ`), per-factor transition tables, and `ρ` over the
/// flattened state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredMdp {
    pub structure: GraphStructure,
    /// `reward_factors[i][z]` is the mean of `R_i` at scoped value index `z`.
    pub reward_factors: Vec<Vec<f64>>,
    /// `transition_factors[j][z]` is the distribution of next `s[j]`.
    pub transition_factors: Vec<Vec<Vec<f64>>>,
    pub initial_distribution: Vec<f64>,
}

impl FactoredMdp {
    pub fn new(
        structure: GraphStructure,
        reward_factors: Vec<Vec<f64>>,
        transition_factors: Vec<Vec<Vec<f64>>>,
        initial_distribution: Vec<f64>,
    ) -> Result<Self> {
        let mdp = FactoredMdp {
            structure,
            reward_factors,
            transition_factors,
            initial_distribution,
        };
        let violations = mdp.validate();
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(FrlError::InvalidModel(violations))
        }
    }

    /// Every violated invariant; empty when the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.structure.violations();
        if !out.is_empty() {
            return out;
        }
        let g = &self.structure;
        let bound = g.reward_mean_bound;
        if self.reward_factors.len() != g.num_reward_factors() {
            out.push(Violation::TableCount {
                kind: FactorKind::Reward,
                expected: g.num_reward_factors(),
                found: self.reward_factors.len(),
            });
        }
        for (i, table) in self.reward_factors.iter().enumerate().take(g.num_reward_factors()) {
            let rows = g.reward_domain_size(i);
            if table.len() != rows {
                out.push(Violation::TableRows {
                    kind: FactorKind::Reward,
                    factor: i,
                    expected: rows,
                    found: table.len(),
                });
            }
            for (z, &mean) in table.iter().enumerate() {
                if !(mean >= -PROB_TOL && mean <= bound + PROB_TOL) {
                    out.push(Violation::RewardMean {
                        factor: i,
                        row: z,
                        mean,
                        bound,
                    });
                }
            }
        }
        let m = g.num_state_factors();
        if self.transition_factors.len() != m {
            out.push(Violation::TableCount {
                kind: FactorKind::Transition,
                expected: m,
                found: self.transition_factors.len(),
            });
        }
        for (j, table) in self.transition_factors.iter().enumerate().take(m) {
            let rows = g.transition_domain_size(j);
            if table.len() != rows {
                out.push(Violation::TableRows {
                    kind: FactorKind::Transition,
                    factor: j,
                    expected: rows,
                    found: table.len(),
                });
            }
            let outcomes = g.state_factor_sizes[j];
            for (z, row) in table.iter().enumerate() {
                if row.len() != outcomes {
                    out.push(Violation::RowLength {
                        factor: j,
                        row: z,
                        expected: outcomes,
                        found: row.len(),
                    });
                }
                for (y, &p) in row.iter().enumerate() {
                    if !(p >= 0.0) {
                        out.push(Violation::NegativeProbability {
                            factor: j,
                            row: z,
                            outcome: y,
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if !((sum - 1.0).abs() <= PROB_TOL) {
                    out.push(Violation::RowSum {
                        factor: j,
                        row: z,
                        sum,
                    });
                }
            }
        }
        let num_states = g.num_states().unwrap_or(0);
        if self.initial_distribution.len() != num_states {
            out.push(Violation::InitialLength {
                expected: num_states,
                found: self.initial_distribution.len(),
            });
        }
        for (s, &p) in self.initial_distribution.iter().enumerate() {
            if !(p >= 0.0) {
                out.push(Violation::InitialNegative { state: s, value: p });
            }
        }
        let sum: f64 = self.initial_distribution.iter().sum();
        if !((sum - 1.0).abs() <= PROB_TOL) {
            out.push(Violation::InitialSum(sum));
        }
        out
    }

    fn check_point(&self, x: &FactoredVector) -> Result<()> {
        let sizes = &self.structure.combined_factor_sizes;
        if x.len() != sizes.len() {
            return Err(FrlError::Structure(format!(
                "point has {} coordinates, structure has {}",
                x.len(),
                sizes.len()
            )));
        }
        if let Some((i, (&c, &size))) = x.coords().iter().zip(sizes).enumerate().find(|(_, (c, s))| c >= s) {
            return Err(FrlError::Structure(format!(
                "coordinate {i} has value {c}, factor size is {size}"
            )));
        }
        Ok(())
    }

    /// `P(s_next | x) = ∏_j P_j(s_next[j] | x[Z_j])`.
    pub fn transition_prob(&self, x: &FactoredVector, s_next: &FactoredVector) -> Result<f64> {
        self.check_point(x)?;
        let g = &self.structure;
        if s_next.len() != g.num_state_factors() {
            return Err(FrlError::Structure(format!(
                "next state has {} coordinates, structure has {} state factors",
                s_next.len(),
                g.num_state_factors()
            )));
        }
        let mut p = 1.0;
        for (j, scope) in g.transition_scopes.iter().enumerate() {
            let z = g.row_of(x, scope)?;
            let y = s_next.coords()[j];
            let row = &self.transition_factors[j][z];
            p *= *row.get(y).ok_or_else(|| {
                FrlError::Structure(format!("next-state coordinate {j} out of range: {y}"))
            })?;
        }
        Ok(p)
    }

    /// Sum of the factor means at `x`.
    pub fn expected_reward(&self, x: &FactoredVector) -> Result<f64> {
        self.check_point(x)?;
        let g = &self.structure;
        let mut total = 0.0;
        for (i, scope) in g.reward_scopes.iter().enumerate() {
            total += self.reward_factors[i][g.row_of(x, scope)?];
        }
        Ok(total)
    }

    /// Draws per-factor Gaussian rewards and an independent next value for
    /// every state factor.
    pub fn sample_step<R: Rng + ?Sized>(&self, x: &FactoredVector, rng: &mut R) -> Result<StepSample> {
        self.check_point(x)?;
        let g = &self.structure;
        let mut rewards = Vec::with_capacity(g.num_reward_factors());
        for (i, scope) in g.reward_scopes.iter().enumerate() {
            let mean = self.reward_factors[i][g.row_of(x, scope)?];
            rewards.push(gaussian(mean, g.reward_noise, rng));
        }
        let mut next = Vec::with_capacity(g.num_state_factors());
        for (j, scope) in g.transition_scopes.iter().enumerate() {
            let row = &self.transition_factors[j][g.row_of(x, scope)?];
            next.push(sample_categorical(row, rng));
        }
        Ok(StepSample {
            total: rewards.iter().sum(),
            rewards,
            next_state: FactoredVector(next),
        })
    }

    /// The equivalent tabular MDP, refusing spaces above `cap` pairs.
    pub fn flatten(&self, cap: usize) -> Result<TabularMdp> {
        let index = FlatIndex::new(&self.structure, cap)?;
        self.flatten_with(&index)
    }

    /// Flattens using a precomputed index built from this model's structure.
    pub fn flatten_with(&self, index: &FlatIndex) -> Result<TabularMdp> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(FrlError::InvalidModel(violations));
        }
        let ns = index.num_states();
        let na = index.num_actions();
        let mut expected_reward = Vec::with_capacity(ns * na);
        let mut transitions = Vec::with_capacity(ns * na * ns);
        let mut joint = Vec::with_capacity(ns);
        let mut next = Vec::with_capacity(ns);
        for pair in 0..ns * na {
            expected_reward.push(
                self.reward_factors
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t[index.reward_row(i, pair)])
                    .sum(),
            );
            joint.clear();
            joint.push(1.0);
            for (j, table) in self.transition_factors.iter().enumerate() {
                let row = &table[index.transition_row(j, pair)];
                next.clear();
                for &p in &joint {
                    next.extend(row.iter().map(|&q| p * q));
                }
                std::mem::swap(&mut joint, &mut next);
            }
            transitions.extend_from_slice(&joint);
        }
        Ok(TabularMdp {
            num_states: ns,
            num_actions: na,
            horizon: self.structure.horizon,
            expected_reward,
            transitions,
            initial_distribution: self.initial_distribution.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: FactoredMdp = serde_json::from_str(text)?;
        let violations = mdp.validate();
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(FrlError::InvalidModel(violations))
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| FrlError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FrlError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Free-function form of [`FactoredMdp::validate`].
pub fn validate(mdp: &FactoredMdp) -> Vec<Violation> {
    mdp.validate()
}

pub(crate) fn gaussian<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd)
        .expect("finite nonnegative standard deviation")
        .sample(rng)
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total mass
    p.iter().rposition(|&q| q > 0.0).unwrap_or(p.len() - 1)
}

/// A flat finite-horizon MDP. Row `(s, a)` lives at `s * num_actions + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// `R̄(s, a)`.
    pub expected_reward: Vec<f64>,
    /// `P(s' | s, a)` at `(s * num_actions + a) * num_states + s'`.
    pub transitions: Vec<f64>,
    pub initial_distribution: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        expected_reward: Vec<f64>,
        transitions: Vec<f64>,
        initial_distribution: Vec<f64>,
    ) -> Result<Self> {
        let mdp = TabularMdp {
            num_states,
            num_actions,
            horizon,
            expected_reward,
            transitions,
            initial_distribution,
        };
        mdp.check()?;
        Ok(mdp)
    }

    fn check(&self) -> Result<()> {
        let pairs = self.num_states * self.num_actions;
        if self.num_states == 0 || self.num_actions == 0 || self.horizon == 0 {
            return Err(FrlError::Structure(
                "tabular MDP needs at least one state, one action and horizon ≥ 1".into(),
            ));
        }
        if self.expected_reward.len() != pairs
            || self.transitions.len() != pairs * self.num_states
            || self.initial_distribution.len() != self.num_states
        {
            return Err(FrlError::Structure("tabular MDP dimensions disagree".into()));
        }
        for pair in 0..pairs {
            let row = &self.transitions[pair * self.num_states..(pair + 1) * self.num_states];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > PROB_TOL {
                return Err(FrlError::Structure(format!(
                    "row for state-action pair {pair} is not a probability vector"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.expected_reward[s * self.num_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }
}
