#![allow(dead_code)]

use frl_core::estimation::{ConfidenceFamily, FactorStats};
use frl_core::fmdp::{FactoredMdp, GraphStructure, Scope, TabularMdp, DEFAULT_CAP};
use frl_core::harness::env::random_tables;
use rand::seq::index::sample;
use rand::Rng;

/// A random structure with up to `max_m` state factors of size ≤ `max_size`,
/// one or two small action factors and scopes of size ≤ `max_scope`.
pub fn random_structure<R: Rng>(rng: &mut R, max_m: usize, max_size: usize, max_scope: usize, horizon: usize) -> GraphStructure {
    let m = rng.random_range(1..=max_m);
    let actions = rng.random_range(1..=2);
    let state_sizes: Vec<usize> = (0..m).map(|_| rng.random_range(1..=max_size)).collect();
    let mut sizes = state_sizes.clone();
    sizes.extend((0..actions).map(|_| rng.random_range(1..=2)));
    let n = sizes.len();
    let scope = |rng: &mut R| {
        let len = rng.random_range(1..=max_scope.min(n));
        Scope::new(sample(rng, n, len).into_vec()).unwrap()
    };
    let l = rng.random_range(1..=2);
    let reward_scopes = (0..l).map(|_| scope(rng)).collect();
    let transition_scopes = (0..m).map(|_| scope(rng)).collect();
    GraphStructure::new(state_sizes, sizes, reward_scopes, transition_scopes, horizon, 1.0, 1.0).unwrap()
}

pub fn random_mdp<R: Rng>(rng: &mut R, structure: GraphStructure) -> FactoredMdp {
    random_tables(structure, DEFAULT_CAP, rng).unwrap()
}

/// A random tabular MDP with Dirichlet-like rows and rewards in [0, 1].
pub fn random_tabular<R: Rng>(rng: &mut R, ns: usize, na: usize, horizon: usize) -> TabularMdp {
    let rewards = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    let mut transitions = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let raw: Vec<f64> = (0..ns).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = raw.iter().sum();
        transitions.extend(raw.iter().map(|x| x / total));
    }
    TabularMdp::new(ns, na, horizon, rewards, transitions, vec![1.0 / ns as f64; ns]).unwrap()
}

/// A family centred on `center` with random finite radii below `max_radius`.
pub fn random_family<R: Rng>(rng: &mut R, center: &FactoredMdp, max_radius: f64) -> ConfidenceFamily {
    let g = &center.structure;
    let mut family = ConfidenceFamily::build(&FactorStats::new(g), g, 1, 0.1).unwrap();
    for (f, means) in family.reward.iter_mut().zip(&center.reward_factors) {
        f.means = means.clone();
        f.radii = means.iter().map(|_| rng.random::<f64>() * max_radius).collect();
    }
    for (f, rows) in family.transition.iter_mut().zip(&center.transition_factors) {
        f.rows = rows.clone();
        f.radii = rows.iter().map(|_| rng.random::<f64>() * max_radius).collect();
    }
    family
}

/// A uniformly random direction from `center`, scaled into the L1 ball.
pub fn random_row_in_ball<R: Rng>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let raw: Vec<f64> = center.iter().map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    let q: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let dist: f64 = q.iter().zip(center).map(|(a, b)| (a - b).abs()).sum();
    let t = if dist > 0.0 { (radius * rng.random::<f64>() / dist).min(1.0) } else { 0.0 };
    let mut p: Vec<f64> = center.iter().zip(&q).map(|(c, q)| c + t * (q - c)).collect();
    // keep exactly on the simplex
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// A random member of a family's per-factor boxes.
pub fn random_member<R: Rng>(rng: &mut R, family: &ConfidenceFamily, rho: &[f64]) -> FactoredMdp {
    let c = family.structure.reward_mean_bound;
    FactoredMdp {
        structure: family.structure.clone(),
        reward_factors: family
            .reward
            .iter()
            .map(|f| {
                f.means
                    .iter()
                    .zip(&f.radii)
                    .map(|(m, r)| (m + r.min(c) * rng.random_range(-1.0..=1.0)).clamp(0.0, c))
                    .collect()
            })
            .collect(),
        transition_factors: family
            .transition
            .iter()
            .map(|f| f.rows.iter().zip(&f.radii).map(|(row, &r)| random_row_in_ball(rng, row, r.min(2.0))).collect())
            .collect(),
        initial_distribution: rho.to_vec(),
    }
}

/// Step-0 values of a policy given as `actions[step * S + s]`, by direct
/// backward recursion.
pub fn evaluate_actions(m: &TabularMdp, actions: &[usize]) -> Vec<f64> {
    let (ns, na) = (m.num_states, m.num_actions);
    let mut v = vec![0.0; ns];
    for h in (0..m.horizon).rev() {
        v = (0..ns)
            .map(|s| {
                let a = actions[h * ns + s];
                let pair = s * na + a;
                let row = &m.transitions[pair * ns..(pair + 1) * ns];
                m.expected_reward[pair] + row.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
            })
            .collect();
    }
    v
}

/// Per-state maximum of `V_1` over all `A^(Sτ)` deterministic policies.
pub fn enumerate_optimum(m: &TabularMdp) -> Vec<f64> {
    let len = m.num_states * m.horizon;
    let mut actions = vec![0usize; len];
    let mut best = vec![f64::NEG_INFINITY; m.num_states];
    loop {
        for (b, v) in best.iter_mut().zip(evaluate_actions(m, &actions)) {
            *b = b.max(v);
        }
        let mut i = 0;
        while i < len {
            actions[i] += 1;
            if actions[i] < m.num_actions {
                break;
            }
            actions[i] = 0;
            i += 1;
        }
        if i == len {
            return best;
        }
    }
}

/// Random `(|S|, |A|)` with `|S|·|A| ≤ 8`.
pub fn small_dims<R: Rng>(rng: &mut R) -> (usize, usize) {
    loop {
        let ns = rng.random_range(1..=8);
        let na = rng.random_range(1..=8);
        if ns * na <= 8 {
            return (ns, na);
        }
    }
}

/// Both sides of the factored L1 inequality at one input `x`: the joint
/// distance by enumeration over all next states, and the sum of per-factor
/// distances.
pub fn factored_l1_sides(p: &FactoredMdp, q: &FactoredMdp, x: &frl_core::FactoredVector) -> (f64, f64) {
    let g = &p.structure;
    let mut lhs = 0.0;
    let ns: usize = g.state_factor_sizes.iter().product();
    for s in 0..ns {
        let coords = frl_core::fmdp::mixed_radix_unindex(s, &g.state_factor_sizes).unwrap();
        let next = frl_core::FactoredVector::new(coords);
        lhs += (p.transition_prob(x, &next).unwrap() - q.transition_prob(x, &next).unwrap()).abs();
    }
    let rhs = (0..g.num_state_factors())
        .map(|j| {
            let z = g.row_of(x, &g.transition_scopes[j]).unwrap();
            frl_core::estimation::l1(&p.transition_factors[j][z], &q.transition_factors[j][z])
        })
        .sum();
    (lhs, rhs)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Rejection threshold of the two-sample KS test at level 0.01.
pub fn ks_critical_001(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}
