//! Finite state-space systems and the memory (observation/action history)
//! machinery the dynamic programs are built on.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metric::LabeledMetricSpace;
use crate::uncertain::Range;

/// Default cap on the number of enumerated memories.
pub const DEFAULT_BUDGET: usize = 1_000_000;

/// The label spaces of a state-space system.
#[derive(Debug, Clone)]
pub struct Spaces {
    pub states: LabeledMetricSpace,
    pub actions: LabeledMetricSpace,
    pub disturbances: LabeledMetricSpace,
    pub noises: LabeledMetricSpace,
    pub observations: LabeledMetricSpace,
}

/// Time-invariant finite system: `x' = f(x,u,w)`, `y = h(x,n)`, `c = d(x,u)`.
#[derive(Debug, Clone)]
pub struct StateSpaceSpec {
    name: String,
    states: Arc<LabeledMetricSpace>,
    actions: Arc<LabeledMetricSpace>,
    disturbances: Arc<LabeledMetricSpace>,
    noises: Arc<LabeledMetricSpace>,
    observations: Arc<LabeledMetricSpace>,
    costs: Arc<LabeledMetricSpace>,
    cost_values: Vec<f64>,
    initial: Vec<usize>,
    transition: Vec<usize>,
    observation: Vec<usize>,
    cost: Vec<usize>,
    gamma: f64,
    observable_cost: bool,
}

fn check_labels(space: &LabeledMetricSpace, what: &str) -> Result<()> {
    if space.is_empty() {
        return Err(Error::InvalidSystem(format!("{what} space is empty")));
    }
    for l in space.labels() {
        if l.is_empty() || l.contains(['|', ':', ',', '\n']) {
            return Err(Error::InvalidSystem(format!(
                "{what} label `{l}` must be nonempty and free of `|`, `:`, `,`"
            )));
        }
    }
    Ok(())
}

impl StateSpaceSpec {
    /// Builds dense tables from the given functions; every table is total by
    /// construction.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fns(
        name: impl Into<String>,
        spaces: Spaces,
        initial: Vec<usize>,
        transition: impl Fn(usize, usize, usize) -> usize,
        observe: impl Fn(usize, usize) -> usize,
        cost: impl Fn(usize, usize) -> f64,
        gamma: f64,
        observable_cost: bool,
    ) -> Result<Self> {
        check_labels(&spaces.states, "state")?;
        check_labels(&spaces.actions, "action")?;
        check_labels(&spaces.disturbances, "disturbance")?;
        check_labels(&spaces.noises, "noise")?;
        check_labels(&spaces.observations, "observation")?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidSystem(format!("discount {gamma} outside (0,1)")));
        }
        let nx = spaces.states.len();
        let nu = spaces.actions.len();
        let nw = spaces.disturbances.len();
        let nn = spaces.noises.len();
        let ny = spaces.observations.len();
        if initial.is_empty() {
            return Err(Error::InvalidSystem("initial-state range is empty".into()));
        }
        if initial.iter().any(|&x| x >= nx) {
            return Err(Error::InvalidSystem("initial state out of range".into()));
        }
        let mut initial = initial;
        initial.sort_unstable();
        initial.dedup();

        let mut trans = Vec::with_capacity(nx * nu * nw);
        for x in 0..nx {
            for u in 0..nu {
                for w in 0..nw {
                    let nxt = transition(x, u, w);
                    if nxt >= nx {
                        return Err(Error::InvalidSystem(format!("transition target {nxt} out of range")));
                    }
                    trans.push(nxt);
                }
            }
        }
        let mut obs = Vec::with_capacity(nx * nn);
        for x in 0..nx {
            for n in 0..nn {
                let y = observe(x, n);
                if y >= ny {
                    return Err(Error::InvalidSystem(format!("observation {y} out of range")));
                }
                obs.push(y);
            }
        }
        let raw: Vec<f64> = (0..nx).flat_map(|x| (0..nu).map(move |u| (x, u))).map(|(x, u)| cost(x, u)).collect();
        if let Some(c) = raw.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::InvalidSystem(format!("cost {c} must be finite and nonnegative")));
        }
        let mut cost_values = raw.clone();
        cost_values.sort_by(f64::total_cmp);
        cost_values.dedup();
        let cost_idx = raw
            .iter()
            .map(|c| cost_values.iter().position(|v| v == c).expect("cost value present"))
            .collect();
        let costs = LabeledMetricSpace::real_line(&cost_values)?;

        Ok(StateSpaceSpec {
            name: name.into(),
            states: Arc::new(spaces.states),
            actions: Arc::new(spaces.actions),
            disturbances: Arc::new(spaces.disturbances),
            noises: Arc::new(spaces.noises),
            observations: Arc::new(spaces.observations),
            costs: Arc::new(costs),
            cost_values,
            initial,
            transition: trans,
            observation: obs,
            cost: cost_idx,
            gamma,
            observable_cost,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn states(&self) -> &Arc<LabeledMetricSpace> {
        &self.states
    }
    pub fn actions(&self) -> &Arc<LabeledMetricSpace> {
        &self.actions
    }
    pub fn disturbances(&self) -> &Arc<LabeledMetricSpace> {
        &self.disturbances
    }
    pub fn noises(&self) -> &Arc<LabeledMetricSpace> {
        &self.noises
    }
    pub fn observations(&self) -> &Arc<LabeledMetricSpace> {
        &self.observations
    }
    /// The cost set as points on the real line.
    pub fn costs(&self) -> &Arc<LabeledMetricSpace> {
        &self.costs
    }
    pub fn cost_values(&self) -> &[f64] {
        &self.cost_values
    }
    pub fn cost_value(&self, c: usize) -> f64 {
        self.cost_values[c]
    }
    pub fn initial(&self) -> &[usize] {
        &self.initial
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn observable_cost(&self) -> bool {
        self.observable_cost
    }
    pub fn num_states(&self) -> usize {
        self.states.len()
    }
    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }
    pub fn c_min(&self) -> f64 {
        self.cost_values[0]
    }
    pub fn c_max(&self) -> f64 {
        *self.cost_values.last().expect("nonempty cost set")
    }
    /// `c_max / (1 - gamma)`.
    pub fn a_max(&self) -> f64 {
        self.c_max() / (1.0 - self.gamma)
    }

    #[inline]
    pub fn next_state(&self, x: usize, u: usize, w: usize) -> usize {
        self.transition[(x * self.actions.len() + u) * self.disturbances.len() + w]
    }
    #[inline]
    pub fn observe(&self, x: usize, n: usize) -> usize {
        self.observation[x * self.noises.len() + n]
    }
    /// Index of `d(x,u)` in the cost set.
    #[inline]
    pub fn cost_index(&self, x: usize, u: usize) -> usize {
        self.cost[x * self.actions.len() + u]
    }
    pub fn cost(&self, x: usize, u: usize) -> f64 {
        self.cost_values[self.cost_index(x, u)]
    }

    /// Same dynamics with the observable-cost flag replaced.
    pub fn with_observable_cost(&self, observable: bool) -> Self {
        let mut s = self.clone();
        s.observable_cost = observable;
        s
    }

    /// Same dynamics with every cost entry replaced by `c`.
    pub fn with_constant_cost(&self, c: f64) -> Result<Self> {
        let spaces = Spaces {
            states: (*self.states).clone(),
            actions: (*self.actions).clone(),
            disturbances: (*self.disturbances).clone(),
            noises: (*self.noises).clone(),
            observations: (*self.observations).clone(),
        };
        StateSpaceSpec::from_fns(
            format!("{}-constant", self.name),
            spaces,
            self.initial.clone(),
            |x, u, w| self.next_state(x, u, w),
            |x, n| self.observe(x, n),
            |_, _| c,
            self.gamma,
            self.observable_cost,
        )
    }

    /// Whether `y = h(x, n)` reveals `x` exactly (noise-free and injective).
    pub fn is_perfectly_observed(&self) -> bool {
        let mut seen = HashMap::new();
        for x in 0..self.num_states() {
            let y = self.observe(x, 0);
            if (1..self.noises.len()).any(|n| self.observe(x, n) != y) {
                return false;
            }
            if seen.insert(y, x).is_some() {
                return false;
            }
        }
        true
    }

    pub fn label_state(&self, x: usize) -> &str {
        self.states.label(x)
    }
    pub fn label_action(&self, u: usize) -> &str {
        self.actions.label(u)
    }
}

/// Observation/action history, with the realized cost trace when costs are
/// observable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Memory {
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
    pub costs: Option<Vec<usize>>,
}

impl Memory {
    pub fn initial(y0: usize, observable_cost: bool) -> Self {
        Memory {
            observations: vec![y0],
            actions: Vec::new(),
            costs: observable_cost.then(Vec::new),
        }
    }

    pub fn depth(&self) -> usize {
        self.actions.len()
    }

    pub fn last_observation(&self) -> usize {
        *self.observations.last().expect("memory has an initial observation")
    }

    pub fn extend(&self, u: usize, y: usize, c: Option<usize>) -> Memory {
        let mut m = self.clone();
        m.actions.push(u);
        m.observations.push(y);
        if let (Some(costs), Some(c)) = (m.costs.as_mut(), c) {
            costs.push(c);
        }
        m
    }

    /// Accrued cost recomputed from the cost trace, if present.
    pub fn accrued_from_trace(&self, spec: &StateSpaceSpec) -> Option<f64> {
        self.costs.as_ref().map(|cs| {
            cs.iter()
                .enumerate()
                .map(|(l, &c)| spec.gamma().powi(l as i32) * spec.cost_value(c))
                .sum()
        })
    }

    /// Delimited trace such as `y0|u0:c|y1`.
    pub fn trace(&self, spec: &StateSpaceSpec) -> String {
        let mut s = spec.observations().label(self.observations[0]).to_string();
        for t in 0..self.depth() {
            s.push('|');
            s.push_str(spec.label_action(self.actions[t]));
            if let Some(cs) = &self.costs {
                s.push(':');
                s.push_str(spec.costs().label(cs[t]));
            }
            s.push('|');
            s.push_str(spec.observations().label(self.observations[t + 1]));
        }
        s
    }
}

/// Consistent states of a memory, each with the largest accrued cost of any
/// disturbance history that produces the memory and ends in that state.
pub type Belief = BTreeMap<usize, f64>;

/// A feasible memory together with its belief.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryNode {
    pub memory: Memory,
    pub belief: Belief,
}

impl MemoryNode {
    pub fn depth(&self) -> usize {
        self.memory.depth()
    }

    /// `sup [[A_t | m_t]]`.
    pub fn sup_accrued(&self) -> f64 {
        self.belief.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn consistent_states(&self) -> Vec<usize> {
        self.belief.keys().copied().collect()
    }
}

/// One `(c_t, m_{t+1})` element of a successor range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub cost: usize,
    pub child: usize,
    /// `sup` of the accrued cost `a_t` over histories producing this tuple.
    pub sup_accrued: f64,
}

/// Successor range `[[C_t, M_{t+1} | m_t, u_t]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Successors {
    pub nodes: Vec<MemoryNode>,
    pub edges: Vec<Edge>,
}

/// Feasible initial memories, one per observation `y_0`.
pub fn initial_nodes(spec: &StateSpaceSpec) -> Vec<MemoryNode> {
    let mut by_obs: BTreeMap<usize, Belief> = BTreeMap::new();
    for &x in spec.initial() {
        for n in 0..spec.noises().len() {
            by_obs.entry(spec.observe(x, n)).or_default().insert(x, 0.0);
        }
    }
    by_obs
        .into_iter()
        .map(|(y, belief)| MemoryNode {
            memory: Memory::initial(y, spec.observable_cost()),
            belief,
        })
        .collect()
}

/// Exact successor range by enumerating consistent states and all
/// disturbance/noise pairs.
pub fn memory_successors(spec: &StateSpaceSpec, node: &MemoryNode, u: usize) -> Result<Successors> {
    if node.belief.is_empty() {
        return Err(Error::InfeasibleMemory(node.memory.trace(spec)));
    }
    let t = node.depth();
    let discount = spec.gamma().powi(t as i32);
    // key: (observation, cost if observable)
    let mut beliefs: BTreeMap<(usize, Option<usize>), Belief> = BTreeMap::new();
    let mut tuples: BTreeMap<(usize, (usize, Option<usize>)), f64> = BTreeMap::new();
    for (&x, &a) in &node.belief {
        let c = spec.cost_index(x, u);
        let a_next = a + discount * spec.cost_value(c);
        for w in 0..spec.disturbances().len() {
            let xn = spec.next_state(x, u, w);
            for n in 0..spec.noises().len() {
                let y = spec.observe(xn, n);
                let key = (y, spec.observable_cost().then_some(c));
                let slot = beliefs.entry(key).or_default().entry(xn).or_insert(f64::NEG_INFINITY);
                *slot = slot.max(a_next);
                let sup = tuples.entry((c, key)).or_insert(f64::NEG_INFINITY);
                *sup = sup.max(a);
            }
        }
    }
    let keys: Vec<(usize, Option<usize>)> = beliefs.keys().copied().collect();
    let nodes = beliefs
        .into_iter()
        .map(|((y, c), belief)| MemoryNode {
            memory: node.memory.extend(u, y, c),
            belief,
        })
        .collect();
    let edges = tuples
        .into_iter()
        .map(|((cost, key), sup_accrued)| Edge {
            cost,
            child: keys.binary_search(&key).expect("child key present"),
            sup_accrued,
        })
        .collect();
    Ok(Successors { nodes, edges })
}

/// Replays a memory from the start; `None` when the memory is infeasible.
pub fn replay(spec: &StateSpaceSpec, memory: &Memory) -> Option<MemoryNode> {
    let mut node = initial_nodes(spec)
        .into_iter()
        .find(|n| n.memory.observations[0] == memory.observations[0])?;
    for t in 0..memory.depth() {
        let succ = memory_successors(spec, &node, memory.actions[t]).ok()?;
        let want_cost = memory.costs.as_ref().map(|c| c[t]);
        node = succ.nodes.into_iter().find(|n| {
            n.memory.observations[t + 1] == memory.observations[t + 1]
                && n.memory.costs.as_ref().map(|c| c[t]) == want_cost
        })?;
    }
    Some(node)
}

/// `[[X_t | m_t]]`; empty when the memory is infeasible.
pub fn consistent_states(spec: &StateSpaceSpec, memory: &Memory) -> Range {
    let members = replay(spec, memory).map(|n| n.consistent_states()).unwrap_or_default();
    Range::new(spec.states().clone(), members).expect("state indices are valid")
}

/// All feasible memories up to a depth, with successor edges per action.
#[derive(Debug, Clone)]
pub struct MemoryTree {
    pub levels: Vec<Vec<MemoryNode>>,
    /// `edges[t][i][u]`: successor tuples of node `i` at depth `t` into level `t+1`.
    pub edges: Vec<Vec<Vec<Vec<Edge>>>>,
}

impl MemoryTree {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, &MemoryNode)> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(t, l)| l.iter().enumerate().map(move |(i, n)| (t, i, n)))
    }
}

/// Exhaustive tree walk over every feasible memory of depth `<= depth`.
pub fn enumerate_memories(spec: &StateSpaceSpec, depth: usize, budget: usize) -> Result<MemoryTree> {
    let first = initial_nodes(spec);
    let mut count = first.len();
    if count > budget {
        return Err(Error::BudgetExceeded { budget, reached: count });
    }
    let mut levels = vec![first];
    let mut edges = Vec::new();
    for _ in 0..depth {
        let current = levels.last().expect("at least one level");
        let mut next = Vec::new();
        let mut level_edges = Vec::with_capacity(current.len());
        for node in current {
            let mut per_action = Vec::with_capacity(spec.num_actions());
            for u in 0..spec.num_actions() {
                let succ = memory_successors(spec, node, u)?;
                let offset = next.len();
                count += succ.nodes.len();
                if count > budget {
                    return Err(Error::BudgetExceeded { budget, reached: count });
                }
                next.extend(succ.nodes);
                per_action.push(
                    succ.edges
                        .into_iter()
                        .map(|e| Edge {
                            child: e.child + offset,
                            ..e
                        })
                        .collect(),
                );
            }
            level_edges.push(per_action);
        }
        edges.push(level_edges);
        levels.push(next);
    }
    Ok(MemoryTree { levels, edges })
}
