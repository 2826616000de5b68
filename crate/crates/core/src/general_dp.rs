//! Discount-indexed value iteration for general information states.
//!
//! The cumulative discount `z = gamma^k` is carried as the index `k`. Beyond
//! [`RhoKernel::k_sat`] every penalized tuple is dominated, so levels
//! `k >= k_sat` coincide and the table stores `k = 0..=k_sat` exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::info_state::{InfoStateMap, RhoKernel};
use crate::oracle::{evaluate_strategy_finite, FiniteHorizonTable, MemoryStrategy};
use crate::report::{float12, fmt12, Csv};
use crate::system::{MemoryNode, StateSpaceSpec};

/// `Lambda^n(s, k)` for `k = 0..=k_sat`; larger `k` read level `k_sat`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountIndexedValueTable {
    pub iteration: usize,
    pub k_sat: usize,
    pub gamma: f64,
    /// `values[s][k]`.
    pub values: Vec<Vec<f64>>,
}

impl DiscountIndexedValueTable {
    pub fn zero(num_states: usize, k_sat: usize, gamma: f64) -> Self {
        DiscountIndexedValueTable {
            iteration: 0,
            k_sat,
            gamma,
            values: vec![vec![0.0; k_sat + 1]; num_states],
        }
    }

    pub fn get(&self, s: usize, k: usize) -> f64 {
        self.values[s][k.min(self.k_sat)]
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Columns `state,k,value`.
    pub fn to_csv(&self, map: &InfoStateMap) -> String {
        let mut csv = Csv::new(&["state", "k", "value"]);
        for (s, row) in self.values.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                csv.row([map.label(s).to_string(), k.to_string(), fmt12(*v)]);
            }
        }
        csv.finish()
    }
}

/// Bracket of the operator for one action: `sup` over finite tuples of
/// `c + gamma Lambda(s', k+1) + rho gamma^-k`; `None` for an empty row.
fn bracket(kernel: &RhoKernel, lambda: &DiscountIndexedValueTable, s: usize, u: usize, k: usize) -> Option<f64> {
    let inv_z = kernel.gamma.powi(-(k.min(lambda.k_sat) as i32));
    let mut best: Option<f64> = None;
    for e in kernel.row(s, u) {
        let penalty = if e.rho == 0.0 { 0.0 } else { e.rho * inv_z };
        if -penalty > kernel.a_max {
            // dominated by the rho = 0 tuple of the same row
            continue;
        }
        let v = kernel.cost(e.cost) + kernel.gamma * lambda.get(e.next, k + 1) + penalty;
        best = Some(best.map_or(v, |b: f64| b.max(v)));
    }
    best
}

/// `min_u` of the bracket with ties to the smallest action.
fn best_action(kernel: &RhoKernel, lambda: &DiscountIndexedValueTable, s: usize, k: usize) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for u in 0..kernel.num_actions() {
        if let Some(v) = bracket(kernel, lambda, s, u, k) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((u, v));
            }
        }
    }
    best.ok_or_else(|| Error::NoFeasibleAction(format!("state {s}")))
}

/// One application of the discount-indexed operator.
pub fn apply_t(kernel: &RhoKernel, lambda: &DiscountIndexedValueTable) -> Result<DiscountIndexedValueTable> {
    let values = (0..kernel.num_states())
        .into_par_iter()
        .map(|s| {
            (0..=lambda.k_sat)
                .map(|k| best_action(kernel, lambda, s, k).map(|(_, v)| v))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscountIndexedValueTable {
        iteration: lambda.iteration + 1,
        k_sat: lambda.k_sat,
        gamma: lambda.gamma,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iterations: usize,
    pub converged: bool,
    #[serde(with = "float12::option")]
    pub tolerance: Option<f64>,
    /// `||Lambda^{n+1} - Lambda^n||` per iteration.
    #[serde(with = "float12::vec")]
    pub deltas: Vec<f64>,
}

/// `Lambda^0 = 0, ..., Lambda^n` in order.
pub fn iterates_t(kernel: &RhoKernel, n: usize) -> Result<Vec<DiscountIndexedValueTable>> {
    let mut out = vec![DiscountIndexedValueTable::zero(kernel.num_states(), kernel.k_sat(), kernel.gamma)];
    for _ in 0..n {
        let next = apply_t(kernel, out.last().expect("nonempty"))?;
        out.push(next);
    }
    Ok(out)
}

/// Iterates from zero for `max_iters` steps or until the sup-norm change is
/// at most `tol`.
pub fn iterate_t(
    kernel: &RhoKernel,
    max_iters: usize,
    tol: Option<f64>,
) -> Result<(DiscountIndexedValueTable, IterationReport)> {
    let mut lambda = DiscountIndexedValueTable::zero(kernel.num_states(), kernel.k_sat(), kernel.gamma);
    let mut deltas = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let next = apply_t(kernel, &lambda)?;
        let delta = next.sup_distance(&lambda);
        deltas.push(delta);
        lambda = next;
        if tol.is_some_and(|t| delta <= t) {
            converged = true;
            break;
        }
    }
    let report = IterationReport {
        iterations: lambda.iteration,
        converged,
        tolerance: tol,
        deltas,
    };
    Ok((lambda, report))
}

/// Bounds on `V_t(m_t)` from `Lambda^n`:
/// `sup a_t + gamma^t Lambda^n(s, t) + gamma^(n+t) c / (1 - gamma)`.
pub fn value_interval(
    lambda: &DiscountIndexedValueTable,
    s: usize,
    t: usize,
    sup_accrued: f64,
    c_min: f64,
    c_max: f64,
) -> (f64, f64) {
    let g = lambda.gamma;
    let base = sup_accrued + g.powi(t as i32) * lambda.get(s, t);
    let tail = g.powi((lambda.iteration + t) as i32) / (1.0 - g);
    (base + tail * c_min, base + tail * c_max)
}

/// `pi(s, k)` for `k = 0..=k_sat`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoPolicy {
    pub k_sat: usize,
    pub actions: Vec<Vec<usize>>,
}

impl InfoPolicy {
    pub fn action(&self, s: usize, k: usize) -> usize {
        self.actions[s][k.min(self.k_sat)]
    }

    /// Columns `state,k,action`.
    pub fn to_csv(&self, map: &InfoStateMap, spec: &StateSpaceSpec) -> String {
        let mut csv = Csv::new(&["state", "k", "action"]);
        for (s, row) in self.actions.iter().enumerate() {
            for (k, &u) in row.iter().enumerate() {
                csv.row([map.label(s), &k.to_string(), spec.label_action(u)]);
            }
        }
        csv.finish()
    }
}

/// Minimizing action of the operator bracket evaluated on `lambda`.
pub fn extract_policy(kernel: &RhoKernel, lambda: &DiscountIndexedValueTable) -> Result<InfoPolicy> {
    let actions = (0..kernel.num_states())
        .map(|s| {
            (0..=lambda.k_sat)
                .map(|k| best_action(kernel, lambda, s, k).map(|(u, _)| u))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InfoPolicy {
        k_sat: lambda.k_sat,
        actions,
    })
}

/// Memory strategy `g_t(m_t) = pi(sigma(m_t), t)`.
pub struct InfoPolicyStrategy<'a> {
    pub spec: &'a StateSpaceSpec,
    pub map: &'a InfoStateMap,
    pub policy: &'a InfoPolicy,
}

impl MemoryStrategy for InfoPolicyStrategy<'_> {
    fn action(&self, t: usize, node: &MemoryNode) -> usize {
        let s = self
            .map
            .sigma(self.spec, node)
            .expect("policy covers every reachable information state");
        self.policy.action(s, t)
    }
}

/// Finite-horizon worst-case value of the policy through the memory oracle.
pub fn evaluate_info_policy(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    policy: &InfoPolicy,
    horizon: usize,
) -> Result<FiniteHorizonTable> {
    let g = InfoPolicyStrategy { spec, map, policy };
    evaluate_strategy_finite(spec, &g, horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub trials: usize,
    pub seed: u64,
    #[serde(with = "float12")]
    pub gamma: f64,
    #[serde(with = "float12")]
    pub max_ratio: f64,
}

/// Largest `||T a - T b|| / ||a - b||` over random pairs drawn uniformly
/// from `[0, bound]^dim`.
pub fn contraction_trials(
    dim: usize,
    bound: f64,
    gamma: f64,
    trials: usize,
    seed: u64,
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<ContractionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    for _ in 0..trials {
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..=bound)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..=bound)).collect();
        let input = sup_gap(&a, &b);
        if input == 0.0 {
            continue;
        }
        let output = sup_gap(&apply(&a)?, &apply(&b)?);
        max_ratio = max_ratio.max(output / input);
    }
    Ok(ContractionReport {
        trials,
        seed,
        gamma,
        max_ratio,
    })
}

pub(crate) fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Contraction ratio of the discount-indexed operator on random tables in
/// `[0, a_max]`.
pub fn contraction_check(kernel: &RhoKernel, trials: usize, seed: u64) -> Result<ContractionReport> {
    let k_sat = kernel.k_sat();
    let width = k_sat + 1;
    let n = kernel.num_states();
    contraction_trials(n * width, kernel.a_max, kernel.gamma, trials, seed, |flat| {
        let table = unflatten(flat, n, k_sat, kernel.gamma);
        Ok(apply_t(kernel, &table)?.values.concat())
    })
}

pub fn unflatten(flat: &[f64], n: usize, k_sat: usize, gamma: f64) -> DiscountIndexedValueTable {
    DiscountIndexedValueTable {
        iteration: 0,
        k_sat,
        gamma,
        values: flat.chunks(k_sat + 1).take(n).map(<[f64]>::to_vec).collect(),
    }
}
