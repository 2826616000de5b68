//! Brute-force finite-horizon dynamic program over memories.
//!
//! Every value here comes from exhaustive enumeration of feasible memories;
//! the information-state solvers are checked against it.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::report::{fmt12, Csv};
use crate::system::{
    enumerate_memories, memory_successors, Memory, MemoryNode, MemoryTree, StateSpaceSpec, DEFAULT_BUDGET,
};
use crate::uncertain::CostDistribution;

/// `J_t(m_t; T)` (or `J_t^g`) for every feasible memory of depth `t <= T`.
#[derive(Debug, Clone)]
pub struct FiniteHorizonTable {
    pub horizon: usize,
    pub gamma: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub tree: Arc<MemoryTree>,
    /// `values[t][i]` for node `i` of level `t`.
    pub values: Vec<Vec<f64>>,
    /// Minimizing (or prescribed) action per node.
    pub actions: Vec<Vec<usize>>,
}

impl FiniteHorizonTable {
    pub fn value(&self, t: usize, i: usize) -> f64 {
        self.values[t][i]
    }

    pub fn node(&self, t: usize, i: usize) -> &MemoryNode {
        &self.tree.levels[t][i]
    }

    /// Looks a memory up by content.
    pub fn find(&self, memory: &Memory) -> Option<(usize, usize)> {
        let t = memory.depth();
        let level = self.tree.levels.get(t)?;
        level.iter().position(|n| &n.memory == memory).map(|i| (t, i))
    }

    /// Bounds on the infinite-horizon value of every memory.
    pub fn envelope(&self) -> Vec<Vec<(f64, f64)>> {
        let tail = self.gamma.powi(self.horizon as i32 + 1) / (1.0 - self.gamma);
        self.values
            .iter()
            .map(|level| {
                level
                    .iter()
                    .map(|&j| (j + tail * self.c_min, j + tail * self.c_max))
                    .collect()
            })
            .collect()
    }

    /// `gamma^(T+1) (c_max - c_min) / (1 - gamma)`.
    pub fn envelope_width(&self) -> f64 {
        envelope_width(self.gamma, self.c_min, self.c_max, self.horizon)
    }

    /// Columns `depth,memory,value,lower,upper`.
    pub fn to_csv(&self, spec: &StateSpaceSpec) -> String {
        let env = self.envelope();
        let mut csv = Csv::new(&["depth", "memory", "value", "lower", "upper"]);
        for (t, i, node) in self.tree.nodes() {
            let (lo, hi) = env[t][i];
            csv.row([
                t.to_string(),
                node.memory.trace(spec),
                fmt12(self.values[t][i]),
                fmt12(lo),
                fmt12(hi),
            ]);
        }
        csv.finish()
    }
}

pub fn envelope_width(gamma: f64, c_min: f64, c_max: f64, horizon: usize) -> f64 {
    gamma.powi(horizon as i32 + 1) * (c_max - c_min) / (1.0 - gamma)
}

/// Per-memory `(lower, upper)` bounds on `V_t(m_t)`.
pub fn value_envelope(table: &FiniteHorizonTable) -> Vec<Vec<(f64, f64)>> {
    table.envelope()
}

/// A control law on memories.
pub trait MemoryStrategy: Sync {
    fn action(&self, t: usize, node: &MemoryNode) -> usize;
}

impl<F: Fn(usize, &MemoryNode) -> usize + Sync> MemoryStrategy for F {
    fn action(&self, t: usize, node: &MemoryNode) -> usize {
        self(t, node)
    }
}

/// Always plays one action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantStrategy(pub usize);

impl MemoryStrategy for ConstantStrategy {
    fn action(&self, _t: usize, _node: &MemoryNode) -> usize {
        self.0
    }
}

/// Strategy read from a table of memories.
#[derive(Debug, Clone, Default)]
pub struct TableStrategy {
    pub actions: HashMap<Memory, usize>,
}

impl TableStrategy {
    pub fn from_table(table: &FiniteHorizonTable) -> Self {
        let actions = table
            .tree
            .nodes()
            .map(|(t, i, n)| (n.memory.clone(), table.actions[t][i]))
            .collect();
        TableStrategy { actions }
    }
}

impl MemoryStrategy for TableStrategy {
    fn action(&self, _t: usize, node: &MemoryNode) -> usize {
        *self.actions.get(&node.memory).expect("strategy defined on every feasible memory")
    }
}

pub fn memory_tree(spec: &StateSpaceSpec, horizon: usize) -> Result<Arc<MemoryTree>> {
    enumerate_memories(spec, horizon, DEFAULT_BUDGET).map(Arc::new)
}

pub fn solve_finite_horizon(spec: &StateSpaceSpec, horizon: usize) -> Result<FiniteHorizonTable> {
    let tree = memory_tree(spec, horizon)?;
    solve_on_tree(spec, tree, horizon)
}

/// Same as [`solve_finite_horizon`] on a tree enumerated at least to `horizon`.
pub fn solve_on_tree(spec: &StateSpaceSpec, tree: Arc<MemoryTree>, horizon: usize) -> Result<FiniteHorizonTable> {
    backward(spec, tree, horizon, None)
}

pub fn evaluate_strategy_finite(
    spec: &StateSpaceSpec,
    strategy: &dyn MemoryStrategy,
    horizon: usize,
) -> Result<FiniteHorizonTable> {
    let tree = memory_tree(spec, horizon)?;
    evaluate_on_tree(spec, strategy, tree, horizon)
}

pub fn evaluate_on_tree(
    spec: &StateSpaceSpec,
    strategy: &dyn MemoryStrategy,
    tree: Arc<MemoryTree>,
    horizon: usize,
) -> Result<FiniteHorizonTable> {
    backward(spec, tree, horizon, Some(strategy))
}

/// `min_u` with ties to the smallest action index; `None` if nothing is finite.
fn argmin(values: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (u, v) in values {
        if v == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((u, v));
        }
    }
    best
}

fn terminal_value(spec: &StateSpaceSpec, node: &MemoryNode, u: usize, t: usize) -> f64 {
    let discount = spec.gamma().powi(t as i32);
    node.belief
        .iter()
        .map(|(&x, &a)| a + discount * spec.cost(x, u))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn backward(
    spec: &StateSpaceSpec,
    tree: Arc<MemoryTree>,
    horizon: usize,
    strategy: Option<&dyn MemoryStrategy>,
) -> Result<FiniteHorizonTable> {
    if tree.depth() < horizon {
        return Err(Error::InvalidConfig(format!(
            "memory tree depth {} is below horizon {horizon}",
            tree.depth()
        )));
    }
    let nu = spec.num_actions();
    let mut values = vec![Vec::new(); horizon + 1];
    let mut actions = vec![Vec::new(); horizon + 1];
    for t in (0..=horizon).rev() {
        let level = &tree.levels[t];
        let next = if t < horizon { Some(&values[t + 1]) } else { None };
        let solved: Vec<Result<(usize, f64)>> = level
            .par_iter()
            .enumerate()
            .map(|(i, node)| {
                let q = |u: usize| -> f64 {
                    match next {
                        None => terminal_value(spec, node, u, t),
                        Some(next) => tree.edges[t][i][u]
                            .iter()
                            .map(|e| next[e.child])
                            .fold(f64::NEG_INFINITY, f64::max),
                    }
                };
                let found = match strategy {
                    Some(g) => {
                        let u = g.action(t, node);
                        if u >= nu {
                            return Err(Error::InvalidConfig(format!("strategy chose action index {u}")));
                        }
                        argmin(std::iter::once((u, q(u))))
                    }
                    None => argmin((0..nu).map(|u| (u, q(u)))),
                };
                found.ok_or_else(|| Error::InfeasibleMemory(node.memory.trace(spec)))
            })
            .collect();
        for r in solved {
            let (u, v) = r?;
            values[t].push(v);
            actions[t].push(u);
        }
    }
    Ok(FiniteHorizonTable {
        horizon,
        gamma: spec.gamma(),
        c_min: spec.c_min(),
        c_max: spec.c_max(),
        tree,
        values,
        actions,
    })
}

/// `r_t(c_t, m_{t+1} | m_t, u_t)` keyed by `(cost index, successor memory)`.
pub fn accrued_distribution(
    spec: &StateSpaceSpec,
    node: &MemoryNode,
    u: usize,
) -> Result<CostDistribution<(usize, Memory)>> {
    accrued_distribution_by(spec, node, u, |child| Ok(child.memory.clone()))
}

/// Accrued distribution with successor memories mapped through `key`; the
/// value of a key is the max over the memories it collects.
pub fn accrued_distribution_by<K: Ord + Clone>(
    spec: &StateSpaceSpec,
    node: &MemoryNode,
    u: usize,
    mut key: impl FnMut(&MemoryNode) -> Result<K>,
) -> Result<CostDistribution<(usize, K)>> {
    let succ = memory_successors(spec, node, u)?;
    let sup = node.sup_accrued();
    let mut values: BTreeMap<(usize, K), f64> = BTreeMap::new();
    for e in &succ.edges {
        let k = key(&succ.nodes[e.child])?;
        let v = values.entry((e.cost, k)).or_insert(f64::NEG_INFINITY);
        *v = v.max(e.sup_accrued - sup);
    }
    CostDistribution::new(values, spec.a_max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::extreal::ExtReal;

    #[test]
    fn single_state_one_step() {
        let spec = catalog::load("constant_cost");
        let table = solve_finite_horizon(&spec, 0).unwrap();
        assert_eq!(table.values[0], vec![2.0]);
    }

    #[test]
    fn deterministic_chain() {
        let spec = catalog::load("two_step_chain");
        let table = solve_finite_horizon(&spec, 1).unwrap();
        assert!((table.value(0, 0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn adversarial_pair_takes_worst_costs() {
        let spec = catalog::load("adversarial_pair");
        let table = solve_finite_horizon(&spec, 1).unwrap();
        assert!((table.value(0, 0) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn optimal_strategy_reproduces_table() {
        for name in ["perfect_chain", "noisy_three", "hidden_fork"] {
            let spec = catalog::load(name);
            let table = solve_finite_horizon(&spec, 3).unwrap();
            let g = TableStrategy::from_table(&table);
            let eval = evaluate_strategy_finite(&spec, &g, 3).unwrap();
            assert_eq!(eval.values, table.values, "{name}");
        }
    }

    #[test]
    fn dominated_action_costs_more() {
        let spec = catalog::load("perfect_chain");
        let table = solve_finite_horizon(&spec, 3).unwrap();
        for u in 0..spec.num_actions() {
            let eval = evaluate_strategy_finite(&spec, &ConstantStrategy(u), 3).unwrap();
            for (a, b) in eval.values.iter().flatten().zip(table.values.iter().flatten()) {
                assert!(a >= b);
            }
        }
    }

    #[test]
    fn envelope_width_formula() {
        assert!((envelope_width(0.5, 0.0, 2.0, 3) - 0.25).abs() < 1e-15);
        let spec = catalog::load("constant_cost");
        let table = solve_finite_horizon(&spec, 4).unwrap();
        for (lo, hi) in table.envelope().into_iter().flatten() {
            assert_eq!(lo, hi);
            assert!((lo - 2.0 / 0.03).abs() < 1e-9);
        }
    }

    #[test]
    fn observable_cost_accrued_distribution_is_indicator() {
        let spec = catalog::load("noisy_three");
        let tree = enumerate_memories(&spec, 3, DEFAULT_BUDGET).unwrap();
        for (_, _, node) in tree.nodes() {
            for u in 0..spec.num_actions() {
                let r = accrued_distribution(&spec, node, u).unwrap();
                assert!(r.entries().values().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn hidden_fork_penalizes_cheap_branch() {
        let spec = catalog::load("hidden_fork");
        let tree = enumerate_memories(&spec, 1, DEFAULT_BUDGET).unwrap();
        let node = &tree.levels[1][0];
        let r = accrued_distribution(&spec, node, 0).unwrap();
        let mut vals: Vec<f64> = r.entries().values().copied().collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![-1.0, 0.0]);
        let missing = (spec.cost_index(0, 0), node.memory.clone());
        assert_eq!(r.value(&missing), ExtReal::NegInf);
    }
}
