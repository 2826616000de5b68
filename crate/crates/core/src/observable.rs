//! Systems whose costs are observed: the accrued distribution collapses to
//! an indicator and the set of consistent states is an information state
//! with a plain (undiscounted-index) Bellman operator.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::general_dp::{contraction_trials, ContractionReport, IterationReport};
use crate::info_state::{explore_info_states, InfoStateKind, InfoStateMap, VerifyReport, Witness, INFO_STATE_BUDGET};
use crate::metric::LabeledMetricSpace;
use crate::oracle::{accrued_distribution, evaluate_strategy_finite, FiniteHorizonTable, MemoryStrategy};
use crate::report::{fmt12, Csv};
use crate::system::{enumerate_memories, memory_successors, MemoryNode, StateSpaceSpec, DEFAULT_BUDGET};
use crate::uncertain::hausdorff_by;

/// `[[C, S' | s, u]]` for every state and action.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatKernel {
    /// `rows[s][u]`: sorted `(cost index, next state)` pairs.
    pub rows: Vec<Vec<Vec<(usize, usize)>>>,
    pub gamma: f64,
    pub a_max: f64,
    pub cost_values: Vec<f64>,
    pub states: Arc<LabeledMetricSpace>,
}

impl FlatKernel {
    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn num_actions(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, s: usize, u: usize) -> &[(usize, usize)] {
        &self.rows[s][u]
    }

    pub fn cost(&self, c: usize) -> f64 {
        self.cost_values[c]
    }

    /// Hausdorff distance between two `(cost, next)` ranges, tuple distance
    /// being the sum of the cost gap and the state distance.
    pub fn row_distance(&self, a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
        tuple_hausdorff(a, b, &self.cost_values, &self.states)
    }

    /// Columns `state,action,cost,next`.
    pub fn to_csv(&self, spec: &StateSpaceSpec) -> String {
        let mut csv = Csv::new(&["state", "action", "cost", "next"]);
        for (s, row) in self.rows.iter().enumerate() {
            for (u, entries) in row.iter().enumerate() {
                for &(c, n) in entries {
                    csv.row([
                        self.states.label(s),
                        spec.label_action(u),
                        &fmt12(self.cost(c)),
                        self.states.label(n),
                    ]);
                }
            }
        }
        csv.finish()
    }
}

pub(crate) fn tuple_hausdorff(
    a: &[(usize, usize)],
    b: &[(usize, usize)],
    cost_values: &[f64],
    states: &LabeledMetricSpace,
) -> f64 {
    hausdorff_by(a, b, |p, q| (cost_values[p.0] - cost_values[q.0]).abs() + states.d(p.1, q.1))
        .unwrap_or(f64::INFINITY)
}

/// `Lambda-bar^n(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatValueTable {
    pub iteration: usize,
    pub gamma: f64,
    pub values: Vec<f64>,
}

impl FlatValueTable {
    pub fn zero(n: usize, gamma: f64) -> Self {
        FlatValueTable {
            iteration: 0,
            gamma,
            values: vec![0.0; n],
        }
    }

    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        crate::general_dp::sup_gap(&self.values, &other.values)
    }

    /// Columns `state,value`.
    pub fn to_csv(&self, states: &LabeledMetricSpace) -> String {
        let mut csv = Csv::new(&["state", "value"]);
        for (s, v) in self.values.iter().enumerate() {
            csv.row([states.label(s).to_string(), fmt12(*v)]);
        }
        csv.finish()
    }
}

fn flat_best(kernel: &FlatKernel, values: &[f64], s: usize) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for u in 0..kernel.num_actions() {
        let row = kernel.row(s, u);
        if row.is_empty() {
            continue;
        }
        let v = row
            .iter()
            .map(|&(c, n)| kernel.cost(c) + kernel.gamma * values[n])
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((u, v));
        }
    }
    best.ok_or_else(|| Error::NoFeasibleAction(kernel.states.label(s).to_string()))
}

/// One worst-case Bellman backup.
pub fn apply_tbar(kernel: &FlatKernel, lambda: &FlatValueTable) -> Result<FlatValueTable> {
    let values = (0..kernel.num_states())
        .into_par_iter()
        .map(|s| flat_best(kernel, &lambda.values, s).map(|(_, v)| v))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlatValueTable {
        iteration: lambda.iteration + 1,
        gamma: lambda.gamma,
        values,
    })
}

/// `Lambda-bar^0 = 0, ..., Lambda-bar^n`.
pub fn iterates_tbar(kernel: &FlatKernel, n: usize) -> Result<Vec<FlatValueTable>> {
    let mut out = vec![FlatValueTable::zero(kernel.num_states(), kernel.gamma)];
    for _ in 0..n {
        let next = apply_tbar(kernel, out.last().expect("nonempty"))?;
        out.push(next);
    }
    Ok(out)
}

pub fn iterate_tbar(kernel: &FlatKernel, max_iters: usize, tol: Option<f64>) -> Result<(FlatValueTable, IterationReport)> {
    let mut lambda = FlatValueTable::zero(kernel.num_states(), kernel.gamma);
    let mut deltas = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let next = apply_tbar(kernel, &lambda)?;
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

/// Minimizing action per state.
pub fn extract_flat_policy(kernel: &FlatKernel, lambda: &FlatValueTable) -> Result<Vec<usize>> {
    (0..kernel.num_states())
        .map(|s| flat_best(kernel, &lambda.values, s).map(|(u, _)| u))
        .collect()
}

pub fn flat_policy_csv(kernel: &FlatKernel, policy: &[usize], spec: &StateSpaceSpec) -> String {
    let mut csv = Csv::new(&["state", "action"]);
    for (s, &u) in policy.iter().enumerate() {
        csv.row([kernel.states.label(s), spec.label_action(u)]);
    }
    csv.finish()
}

/// `a_t + gamma^t Lambda-bar^n(s) + gamma^(n+t) c / (1 - gamma)`.
pub fn flat_value_interval(lambda: &FlatValueTable, s: usize, t: usize, accrued: f64, c_min: f64, c_max: f64) -> (f64, f64) {
    let g = lambda.gamma;
    let base = accrued + g.powi(t as i32) * lambda.get(s);
    let tail = g.powi((lambda.iteration + t) as i32) / (1.0 - g);
    (base + tail * c_min, base + tail * c_max)
}

pub fn contraction_check_flat(kernel: &FlatKernel, trials: usize, seed: u64) -> Result<ContractionReport> {
    contraction_trials(kernel.num_states(), kernel.a_max, kernel.gamma, trials, seed, |v| {
        let t = FlatValueTable {
            iteration: 0,
            gamma: kernel.gamma,
            values: v.to_vec(),
        };
        Ok(apply_tbar(kernel, &t)?.values)
    })
}

/// Max over memories of depth `<= depth` of the gap between the accrued
/// distribution and the indicator of feasible tuples. Works on any system.
pub fn accrued_indicator_gap(spec: &StateSpaceSpec, depth: usize) -> Result<VerifyReport> {
    let tree = enumerate_memories(spec, depth, DEFAULT_BUDGET)?;
    let mut report = VerifyReport {
        kind: "indicator".into(),
        depth,
        checked: 0,
        max_violation: 0.0,
        witness: None,
    };
    for (_, _, node) in tree.nodes() {
        for u in 0..spec.num_actions() {
            report.checked += 1;
            let r = accrued_distribution(spec, node, u)?;
            for ((c, m), &v) in r.entries() {
                if v.abs() > report.max_violation {
                    report.max_violation = v.abs();
                    report.witness = Some(Witness {
                        memory: node.memory.trace(spec),
                        action: spec.label_action(u).to_string(),
                        detail: format!("cost {} next `{}` has value {}", spec.costs().label(*c), m.trace(spec), fmt12(v)),
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Accrued distribution against the indicator, for observable-cost systems.
pub fn observable_cost_check(spec: &StateSpaceSpec, depth: usize) -> Result<VerifyReport> {
    if !spec.observable_cost() {
        return Err(Error::NotObservableCost);
    }
    accrued_indicator_gap(spec, depth)
}

/// Drops the saturation index of an indicator kernel.
pub fn flat_from_rho(map: &InfoStateMap, kernel: &crate::info_state::RhoKernel) -> FlatKernel {
    FlatKernel {
        rows: kernel
            .rows
            .iter()
            .map(|row| row.iter().map(|es| es.iter().map(|e| (e.cost, e.next)).collect()).collect())
            .collect(),
        gamma: kernel.gamma,
        a_max: kernel.a_max,
        cost_values: kernel.cost_values.clone(),
        states: map.space.clone(),
    }
}

/// Successor range of a memory projected through `sigma`.
pub fn projected_successors(spec: &StateSpaceSpec, map: &InfoStateMap, node: &MemoryNode, u: usize) -> Result<Vec<(usize, usize)>> {
    let succ = memory_successors(spec, node, u)?;
    let mut out = BTreeSet::new();
    for e in &succ.edges {
        out.insert((e.cost, map.sigma(spec, &succ.nodes[e.child])?));
    }
    Ok(out.into_iter().collect())
}

/// Hausdorff gap between memory-level and state-level successor ranges,
/// maximized over memories of depth `<= depth`.
pub fn verify_flat_info_state(spec: &StateSpaceSpec, map: &InfoStateMap, kernel: &FlatKernel, depth: usize) -> Result<VerifyReport> {
    let tree = enumerate_memories(spec, depth, DEFAULT_BUDGET)?;
    let mut report = VerifyReport {
        kind: map.kind.name(),
        depth,
        checked: 0,
        max_violation: 0.0,
        witness: None,
    };
    for (_, _, node) in tree.nodes() {
        let s = match map.sigma(spec, node) {
            Ok(s) => Some(s),
            Err(Error::UnknownLabel { .. }) => None,
            Err(e) => return Err(e),
        };
        for u in 0..spec.num_actions() {
            report.checked += 1;
            let (gap, detail) = match s {
                None => (f64::INFINITY, "memory maps outside the explored states".to_string()),
                Some(s) => match projected_successors(spec, map, node, u) {
                    Ok(measured) => {
                        let g = kernel.row_distance(&measured, kernel.row(s, u));
                        (g, format!("Hausdorff gap {} from state `{}`", fmt12(g), map.label(s)))
                    }
                    Err(Error::UnknownLabel { label, .. }) => (f64::INFINITY, format!("successor `{label}` unexplored")),
                    Err(e) => return Err(e),
                },
            };
            if gap > report.max_violation {
                report.max_violation = gap;
                report.witness = Some(Witness {
                    memory: node.memory.trace(spec),
                    action: spec.label_action(u).to_string(),
                    detail,
                });
            }
        }
    }
    Ok(report)
}

/// `sigma-bar(m) = [[X_t | m]]` with its one-step kernel, checked on every
/// memory up to `depth`.
pub fn build_observable_state(spec: &StateSpaceSpec, depth: usize) -> Result<(InfoStateMap, FlatKernel)> {
    if !spec.observable_cost() {
        return Err(Error::NotObservableCost);
    }
    let (map, rho) = explore_info_states(spec, &InfoStateKind::ConditionalRange, INFO_STATE_BUDGET)?;
    let kernel = flat_from_rho(&map, &rho);
    let report = verify_flat_info_state(spec, &map, &kernel, depth)?;
    if report.max_violation > 0.0 {
        let w = report.witness.expect("violation has a witness");
        return Err(Error::InfoStateViolation {
            violation: report.max_violation,
            memory: w.memory,
            action: w.action,
            detail: w.detail,
        });
    }
    Ok((map, kernel))
}

/// `g_t(m) = pi(sigma(m))`.
pub struct FlatPolicyStrategy<'a> {
    pub spec: &'a StateSpaceSpec,
    pub map: &'a InfoStateMap,
    /// Representative of each exact state; identity for exact policies.
    pub assign: &'a [usize],
    pub policy: &'a [usize],
}

impl MemoryStrategy for FlatPolicyStrategy<'_> {
    fn action(&self, _t: usize, node: &MemoryNode) -> usize {
        let s = self.map.sigma(self.spec, node).expect("policy covers every reachable state");
        self.policy[self.assign[s]]
    }
}

pub fn evaluate_flat_policy(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    assign: &[usize],
    policy: &[usize],
    horizon: usize,
) -> Result<FiniteHorizonTable> {
    let g = FlatPolicyStrategy {
        spec,
        map,
        assign,
        policy,
    };
    evaluate_strategy_finite(spec, &g, horizon)
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelDumpRow {
    pub state: String,
    pub action: String,
    pub successors: Vec<(String, String)>,
}

/// `(state, action, [(cost, next)])` records.
pub fn kernel_dump(kernel: &FlatKernel, spec: &StateSpaceSpec) -> Vec<KernelDumpRow> {
    let mut out = Vec::new();
    for (s, row) in kernel.rows.iter().enumerate() {
        for (u, entries) in row.iter().enumerate() {
            out.push(KernelDumpRow {
                state: kernel.states.label(s).to_string(),
                action: spec.label_action(u).to_string(),
                successors: entries
                    .iter()
                    .map(|&(c, n)| (fmt12(kernel.cost(c)), kernel.states.label(n).to_string()))
                    .collect(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::general_dp::iterates_t;
    use crate::info_state::InfoLabel;

    #[test]
    fn observable_cost_holds_on_observable_systems() {
        for name in ["noisy_three", "two_behavior"] {
            let spec = catalog::load(name);
            assert_eq!(observable_cost_check(&spec, 3).unwrap().max_violation, 0.0);
            assert_eq!(observable_cost_check(&spec, 0).unwrap().max_violation, 0.0);
        }
        let hidden = catalog::load("hidden_fork");
        assert_eq!(observable_cost_check(&hidden, 2).unwrap_err(), Error::NotObservableCost);
    }

    #[test]
    fn stripping_cost_trace_breaks_indicator() {
        let spec = catalog::load("noisy_three").with_observable_cost(false);
        let report = accrued_indicator_gap(&spec, 2).unwrap();
        assert!(report.max_violation > 0.0);
        assert!(report.witness.is_some());
    }

    #[test]
    fn perfectly_observed_gives_singletons() {
        let spec = catalog::load("two_behavior");
        let (map, kernel) = build_observable_state(&spec, 3).unwrap();
        assert!(map.labels.iter().all(|l| l.as_set().is_some_and(|s| s.len() == 1)));
        for s in 0..kernel.num_states() {
            for u in 0..kernel.num_actions() {
                let x = map.labels[s].as_set().unwrap()[0];
                let next = map.index[&InfoLabel::Set(vec![spec.next_state(x, u, 0)])];
                assert_eq!(kernel.row(s, u), &[(spec.cost_index(x, u), next)]);
            }
        }
    }

    #[test]
    fn equal_consistent_sets_share_successor_ranges() {
        let spec = catalog::load("noisy_three");
        let (map, kernel) = build_observable_state(&spec, 3).unwrap();
        let tree = enumerate_memories(&spec, 3, DEFAULT_BUDGET).unwrap();
        for (_, _, node) in tree.nodes() {
            let s = map.sigma(&spec, node).unwrap();
            assert_eq!(map.labels[s], InfoLabel::Set(node.consistent_states()));
            for u in 0..spec.num_actions() {
                assert_eq!(projected_successors(&spec, &map, node, u).unwrap(), kernel.row(s, u));
            }
        }
    }

    #[test]
    fn flat_and_indexed_iterations_agree() {
        let spec = catalog::load("noisy_three");
        let (map, flat) = build_observable_state(&spec, 3).unwrap();
        let (map2, rho) = explore_info_states(&spec, &InfoStateKind::ConditionalRange, 1000).unwrap();
        assert_eq!(map.labels, map2.labels);
        let a = iterates_tbar(&flat, 30).unwrap();
        let b = iterates_t(&rho, 30).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for s in 0..flat.num_states() {
                for k in 0..=y.k_sat + 2 {
                    assert!((x.get(s) - y.get(s, k)).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn constant_cost_fixed_point() {
        let spec = catalog::load("constant_cost").with_observable_cost(true);
        let (_, kernel) = build_observable_state(&spec, 2).unwrap();
        let (t, _) = iterate_tbar(&kernel, 5000, Some(1e-12)).unwrap();
        assert!((t.get(0) - 2.0 / 0.03).abs() < 1e-9);
        let (lo, hi) = flat_value_interval(&t, 0, 0, 0.0, spec.c_min(), spec.c_max());
        assert_eq!(lo, hi);
    }

    #[test]
    fn transient_then_free_absorbing() {
        // cost 2 once, then an absorbing state with cost 0
        let states = Arc::new(LabeledMetricSpace::discrete(["go", "stop"]).unwrap());
        let kernel = FlatKernel {
            rows: vec![vec![vec![(1, 1)]], vec![vec![(0, 1)]]],
            gamma: 0.97,
            a_max: 2.0 / 0.03,
            cost_values: vec![0.0, 2.0],
            states,
        };
        let (t, _) = iterate_tbar(&kernel, 100, Some(0.0)).unwrap();
        assert_eq!(t.values, vec![2.0, 0.0]);
    }

    #[test]
    fn flat_contraction() {
        let spec = catalog::load("noisy_three");
        let (_, kernel) = build_observable_state(&spec, 2).unwrap();
        let r = contraction_check_flat(&kernel, 100, 11).unwrap();
        assert!(r.max_ratio <= spec.gamma() + 1e-9);
    }
}
