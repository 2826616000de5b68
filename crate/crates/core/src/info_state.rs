//! Information states: compressions of the memory under which the accrued
//! distribution of `(cost, next state)` is time-invariant.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::LabeledMetricSpace;
use crate::report::{float12, fmt12};
use crate::system::{enumerate_memories, initial_nodes, memory_successors, MemoryNode, StateSpaceSpec, DEFAULT_BUDGET};
use crate::uncertain::hausdorff_by;

/// Accrued-function values are compared on this grid.
pub const QUANTUM: f64 = 1e-9;
/// Kernel values closer than this to zero are stored as zero.
pub const RHO_SNAP: f64 = 1e-12;
/// Largest violation still accepted as exact.
pub const VIOLATION_TOL: f64 = 1e-9;
/// Cap on the number of distinct information states explored.
pub const INFO_STATE_BUDGET: usize = 100_000;

type LabelFn = dyn Fn(&StateSpaceSpec, &MemoryNode) -> String + Send + Sync;

/// User-supplied labelling of memories; labels are compared with the
/// discrete metric.
#[derive(Clone)]
pub struct CustomSigma {
    pub name: String,
    pub label: Arc<LabelFn>,
}

impl CustomSigma {
    pub fn new(
        name: impl Into<String>,
        label: impl Fn(&StateSpaceSpec, &MemoryNode) -> String + Send + Sync + 'static,
    ) -> Self {
        CustomSigma {
            name: name.into(),
            label: Arc::new(label),
        }
    }
}

impl fmt::Debug for CustomSigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomSigma({})", self.name)
    }
}

#[derive(Debug, Clone)]
pub enum InfoStateKind {
    /// The state itself, for perfectly observed systems.
    Perfect,
    /// The last `k + 1` observations of a perfectly observed system, padded
    /// at the start by repeating the first one.
    DeepWindow(usize),
    /// Consistent states with their normalized worst accrued cost.
    AccruedFunction,
    /// Set of consistent states.
    ConditionalRange,
    Custom(CustomSigma),
}

impl InfoStateKind {
    pub fn name(&self) -> String {
        match self {
            InfoStateKind::Perfect => "perfect".into(),
            InfoStateKind::DeepWindow(k) => format!("window:{k}"),
            InfoStateKind::AccruedFunction => "accrued".into(),
            InfoStateKind::ConditionalRange => "range".into(),
            InfoStateKind::Custom(c) => format!("custom:{}", c.name),
        }
    }

    /// Parses `perfect`, `window:<k>`, `accrued` or `range`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(InfoStateKind::Perfect),
            "accrued" => Ok(InfoStateKind::AccruedFunction),
            "range" => Ok(InfoStateKind::ConditionalRange),
            _ => match s.strip_prefix("window:").map(str::parse::<usize>) {
                Some(Ok(k)) => Ok(InfoStateKind::DeepWindow(k)),
                _ => Err(Error::InvalidConfig(format!(
                    "unknown information-state kind `{s}` (expected perfect, window:<k>, accrued or range)"
                ))),
            },
        }
    }

    fn check(&self, spec: &StateSpaceSpec) -> Result<()> {
        let needs_perfect = matches!(self, InfoStateKind::Perfect | InfoStateKind::DeepWindow(_));
        if needs_perfect && !spec.is_perfectly_observed() {
            return Err(Error::IncompatibleKind {
                kind: self.name(),
                reason: "observations do not identify the state".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InfoLabel {
    Point(usize),
    Window(Vec<usize>),
    Set(Vec<usize>),
    /// `(state, value / QUANTUM)` pairs.
    Func(Vec<(usize, i64)>),
    Custom(String),
}

pub fn label_of(spec: &StateSpaceSpec, kind: &InfoStateKind, node: &MemoryNode) -> Result<InfoLabel> {
    Ok(match kind {
        InfoStateKind::Perfect => {
            let states = node.consistent_states();
            if states.len() != 1 {
                return Err(Error::IncompatibleKind {
                    kind: kind.name(),
                    reason: format!("memory `{}` has {} consistent states", node.memory.trace(spec), states.len()),
                });
            }
            InfoLabel::Point(states[0])
        }
        InfoStateKind::DeepWindow(k) => {
            let obs = &node.memory.observations;
            let start = obs.len().saturating_sub(k + 1);
            let mut w = vec![obs[0]; (k + 1).saturating_sub(obs.len())];
            w.extend_from_slice(&obs[start..]);
            InfoLabel::Window(w)
        }
        InfoStateKind::AccruedFunction => {
            let sup = node.sup_accrued();
            InfoLabel::Func(
                node.belief
                    .iter()
                    .map(|(&x, &a)| (x, ((a - sup) / QUANTUM).round() as i64))
                    .collect(),
            )
        }
        InfoStateKind::ConditionalRange => InfoLabel::Set(node.consistent_states()),
        InfoStateKind::Custom(c) => InfoLabel::Custom((c.label)(spec, node)),
    })
}

impl InfoLabel {
    pub fn display(&self, spec: &StateSpaceSpec) -> String {
        let st = |x: &usize| spec.label_state(*x).to_string();
        match self {
            InfoLabel::Point(x) => st(x),
            InfoLabel::Window(w) => w
                .iter()
                .map(|y| spec.observations().label(*y).to_string())
                .collect::<Vec<_>>()
                .join(">"),
            InfoLabel::Set(xs) => format!("{{{}}}", xs.iter().map(st).collect::<Vec<_>>().join(";")),
            InfoLabel::Func(f) => format!(
                "{{{}}}",
                f.iter()
                    .map(|(x, q)| format!("{}={}", st(x), fmt12(*q as f64 * QUANTUM)))
                    .collect::<Vec<_>>()
                    .join(";")
            ),
            InfoLabel::Custom(s) => s.clone(),
        }
    }

    /// Member states of a set label.
    pub fn as_set(&self) -> Option<&[usize]> {
        match self {
            InfoLabel::Set(xs) => Some(xs),
            _ => None,
        }
    }
}

/// Distance between labels of one kind. Function labels use the sup-norm
/// over states, with an absent state read as `-2 a_max`.
pub fn label_distance(spec: &StateSpaceSpec, a: &InfoLabel, b: &InfoLabel) -> f64 {
    match (a, b) {
        (InfoLabel::Point(x), InfoLabel::Point(y)) => spec.states().d(*x, *y),
        (InfoLabel::Window(v), InfoLabel::Window(w)) if v.len() == w.len() => {
            v.iter().zip(w).map(|(p, q)| spec.observations().d(*p, *q)).sum()
        }
        (InfoLabel::Set(v), InfoLabel::Set(w)) => {
            hausdorff_by(v, w, |p, q| spec.states().d(*p, *q)).unwrap_or(f64::INFINITY)
        }
        (InfoLabel::Func(f), InfoLabel::Func(g)) => {
            let floor = -2.0 * spec.a_max();
            let fv: BTreeMap<usize, f64> = f.iter().map(|&(x, q)| (x, q as f64 * QUANTUM)).collect();
            let gv: BTreeMap<usize, f64> = g.iter().map(|&(x, q)| (x, q as f64 * QUANTUM)).collect();
            fv.keys()
                .chain(gv.keys())
                .map(|x| {
                    let p = fv.get(x).copied().unwrap_or(floor);
                    let q = gv.get(x).copied().unwrap_or(floor);
                    (p - q).abs()
                })
                .fold(0.0, f64::max)
        }
        _ => {
            if a == b {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// `sigma` restricted to the labels reached from the initial memories.
#[derive(Debug, Clone)]
pub struct InfoStateMap {
    pub kind: InfoStateKind,
    pub labels: Vec<InfoLabel>,
    pub index: HashMap<InfoLabel, usize>,
    pub space: Arc<LabeledMetricSpace>,
    /// First memory found for each state.
    pub representatives: Vec<MemoryNode>,
    /// States of the initial memories, in observation order.
    pub initial: Vec<usize>,
}

impl InfoStateMap {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, s: usize) -> &str {
        self.space.label(s)
    }

    pub fn sigma(&self, spec: &StateSpaceSpec, node: &MemoryNode) -> Result<usize> {
        let label = label_of(spec, &self.kind, node)?;
        self.index.get(&label).copied().ok_or_else(|| Error::UnknownLabel {
            label: label.display(spec),
            context: format!("information states of kind {}", self.kind.name()),
        })
    }
}

/// One finite entry `rho(c, s' | s, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoEntry {
    pub cost: usize,
    pub next: usize,
    #[serde(with = "float12")]
    pub rho: f64,
}

/// `rho(c, s' | s, u)`; tuples not listed are `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoKernel {
    /// `rows[s][u]`, sorted by `(cost, next)`.
    pub rows: Vec<Vec<Vec<RhoEntry>>>,
    pub gamma: f64,
    pub a_max: f64,
    /// Cost values by cost index.
    pub cost_values: Vec<f64>,
}

impl RhoKernel {
    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn num_actions(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, s: usize, u: usize) -> &[RhoEntry] {
        &self.rows[s][u]
    }

    /// Smallest `k` from which every tuple with `rho < 0` is dominated,
    /// i.e. `gamma^-k |rho| > a_max`. Values are constant in `k` beyond it.
    pub fn k_sat(&self) -> usize {
        let smallest = self
            .rows
            .iter()
            .flatten()
            .flatten()
            .filter(|e| e.rho < 0.0)
            .map(|e| -e.rho)
            .fold(f64::INFINITY, f64::min);
        if !smallest.is_finite() {
            return 0;
        }
        // first k with gamma^-k * smallest > a_max
        let ratio = (self.a_max / smallest).ln() / (1.0 / self.gamma).ln();
        let mut k = ratio.max(0.0).floor() as usize;
        while self.gamma.powi(-(k as i32)) * smallest <= self.a_max {
            k += 1;
        }
        k
    }

    pub fn cost(&self, c: usize) -> f64 {
        self.cost_values[c]
    }

    /// True when every finite entry is zero.
    pub fn is_indicator(&self) -> bool {
        self.rows.iter().flatten().flatten().all(|e| e.rho == 0.0)
    }
}

struct Explorer<'a> {
    spec: &'a StateSpaceSpec,
    kind: &'a InfoStateKind,
    labels: Vec<InfoLabel>,
    index: HashMap<InfoLabel, usize>,
    reps: Vec<MemoryNode>,
    queue: VecDeque<usize>,
    budget: usize,
}

impl Explorer<'_> {
    fn intern(&mut self, node: &MemoryNode) -> Result<usize> {
        let label = label_of(self.spec, self.kind, node)?;
        if let Some(&s) = self.index.get(&label) {
            return Ok(s);
        }
        let s = self.labels.len();
        if s >= self.budget {
            return Err(Error::BudgetExceeded {
                budget: self.budget,
                reached: s + 1,
            });
        }
        self.index.insert(label.clone(), s);
        self.labels.push(label);
        self.reps.push(node.clone());
        self.queue.push_back(s);
        Ok(s)
    }
}

/// Explores the states reachable from the initial memories, deriving each
/// kernel row from the first memory seen for that state. No verification.
pub fn explore_info_states(
    spec: &StateSpaceSpec,
    kind: &InfoStateKind,
    budget: usize,
) -> Result<(InfoStateMap, RhoKernel)> {
    kind.check(spec)?;
    let mut ex = Explorer {
        spec,
        kind,
        labels: Vec::new(),
        index: HashMap::new(),
        reps: Vec::new(),
        queue: VecDeque::new(),
        budget,
    };
    let mut initial = Vec::new();
    for node in initial_nodes(spec) {
        initial.push(ex.intern(&node)?);
    }
    let mut rows: Vec<Vec<Vec<RhoEntry>>> = Vec::new();
    while let Some(s) = ex.queue.pop_front() {
        let node = ex.reps[s].clone();
        let sup = node.sup_accrued();
        let mut row = Vec::with_capacity(spec.num_actions());
        for u in 0..spec.num_actions() {
            let succ = memory_successors(spec, &node, u)?;
            let children = succ.nodes.iter().map(|c| ex.intern(c)).collect::<Result<Vec<_>>>()?;
            let mut vals: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for e in &succ.edges {
                let v = vals.entry((e.cost, children[e.child])).or_insert(f64::NEG_INFINITY);
                *v = v.max(e.sup_accrued - sup);
            }
            row.push(
                vals.into_iter()
                    .map(|((cost, next), rho)| RhoEntry {
                        cost,
                        next,
                        rho: if rho.abs() < RHO_SNAP { 0.0 } else { rho },
                    })
                    .collect(),
            );
        }
        if rows.len() <= s {
            rows.resize(s + 1, Vec::new());
        }
        rows[s] = row;
    }
    let n = ex.labels.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = label_distance(spec, &ex.labels[i], &ex.labels[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut names: Vec<String> = Vec::with_capacity(n);
    let mut seen: HashMap<String, usize> = HashMap::new();
    for l in &ex.labels {
        let base = l.display(spec);
        let count = seen.entry(base.clone()).or_insert(0);
        names.push(if *count == 0 { base } else { format!("{base}#{count}") });
        *count += 1;
    }
    let space = Arc::new(LabeledMetricSpace::from_trusted_table(names, dist)?);
    let map = InfoStateMap {
        kind: kind.clone(),
        labels: ex.labels,
        index: ex.index,
        space,
        representatives: ex.reps,
        initial,
    };
    let kernel = RhoKernel {
        rows,
        gamma: spec.gamma(),
        a_max: spec.a_max(),
        cost_values: spec.cost_values().to_vec(),
    };
    Ok((map, kernel))
}

/// Builds `sigma` and `rho`, then checks the defining equality on every
/// memory up to `depth`; a violation is an error carrying the witness.
pub fn build_info_state(
    spec: &StateSpaceSpec,
    kind: &InfoStateKind,
    depth: usize,
) -> Result<(InfoStateMap, RhoKernel)> {
    let (map, kernel) = explore_info_states(spec, kind, INFO_STATE_BUDGET)?;
    let report = verify_info_state(spec, &map, &kernel, depth)?;
    if report.max_violation > VIOLATION_TOL {
        let w = report.witness.expect("a violation has a witness");
        return Err(Error::InfoStateViolation {
            violation: report.max_violation,
            memory: w.memory,
            action: w.action,
            detail: w.detail,
        });
    }
    Ok((map, kernel))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub memory: String,
    pub action: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub kind: String,
    /// Memories of depth `<= depth` were checked.
    pub depth: usize,
    pub checked: usize,
    #[serde(with = "float12")]
    pub max_violation: f64,
    pub witness: Option<Witness>,
}

/// Discrepancy between a measured distribution and a kernel row:
/// `(-inf, -inf)` counts 0, finite against `-inf` counts `+inf`.
fn row_violation(
    measured: &BTreeMap<(usize, Option<usize>), f64>,
    row: &[RhoEntry],
    space: &LabeledMetricSpace,
    spec: &StateSpaceSpec,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let expected: BTreeMap<(usize, usize), f64> = row.iter().map(|e| ((e.cost, e.next), e.rho)).collect();
    let describe = |c: usize, s: Option<usize>| {
        format!(
            "cost {} next `{}`",
            spec.costs().label(c),
            s.map_or("<unknown>", |s| space.label(s))
        )
    };
    for (&(c, s), &v) in measured {
        let gap = match s.and_then(|s| expected.get(&(c, s))) {
            Some(&e) => (v - e).abs(),
            None => f64::INFINITY,
        };
        if gap > worst.0 {
            worst = (gap, format!("{}: measured {} vs kernel {}", describe(c, s), fmt12(v), match s.and_then(|s| expected.get(&(c, s))) {
                Some(e) => fmt12(*e),
                None => "-inf".into(),
            }));
        }
    }
    for (&(c, s), &e) in &expected {
        if !measured.contains_key(&(c, Some(s))) && worst.0 < f64::INFINITY {
            worst = (f64::INFINITY, format!("{}: measured -inf vs kernel {}", describe(c, Some(s)), fmt12(e)));
        }
    }
    worst
}

/// Max over memories of depth `<= depth`, actions and tuples of
/// `|r_t - rho|`.
pub fn verify_info_state(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    kernel: &RhoKernel,
    depth: usize,
) -> Result<VerifyReport> {
    let tree = enumerate_memories(spec, depth, DEFAULT_BUDGET)?;
    let mut report = VerifyReport {
        kind: map.kind.name(),
        depth,
        checked: 0,
        max_violation: 0.0,
        witness: None,
    };
    let mut record = |v: f64, node: &MemoryNode, u: usize, detail: String| {
        if v > report.max_violation || (report.witness.is_none() && v > 0.0) {
            report.max_violation = v;
            report.witness = Some(Witness {
                memory: node.memory.trace(spec),
                action: spec.label_action(u).to_string(),
                detail,
            });
        }
    };
    let mut checked = 0;
    for (_, _, node) in tree.nodes() {
        let s = match label_of(spec, &map.kind, node).map(|l| map.index.get(&l).copied()) {
            Ok(Some(s)) => Some(s),
            Ok(None) => None,
            Err(e) => return Err(e),
        };
        let sup = node.sup_accrued();
        for u in 0..spec.num_actions() {
            checked += 1;
            let Some(s) = s else {
                record(f64::INFINITY, node, u, "memory maps outside the explored states".into());
                continue;
            };
            let succ = memory_successors(spec, node, u)?;
            let mut measured: BTreeMap<(usize, Option<usize>), f64> = BTreeMap::new();
            for e in &succ.edges {
                let child = &succ.nodes[e.child];
                let key = label_of(spec, &map.kind, child)?;
                let next = map.index.get(&key).copied();
                let v = measured.entry((e.cost, next)).or_insert(f64::NEG_INFINITY);
                *v = v.max(e.sup_accrued - sup);
            }
            let (v, detail) = row_violation(&measured, kernel.row(s, u), &map.space, spec);
            if v > 0.0 {
                record(v, node, u, detail);
            }
        }
    }
    report.checked = checked;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    #[test]
    fn perfect_state_is_last_observation() {
        let spec = catalog::load("perfect_chain");
        let (map, kernel) = build_info_state(&spec, &InfoStateKind::Perfect, 3).unwrap();
        assert_eq!(map.len(), 3);
        assert!(kernel.is_indicator());
        let report = verify_info_state(&spec, &map, &kernel, 3).unwrap();
        assert_eq!(report.max_violation, 0.0);
        for (_, _, node) in enumerate_memories(&spec, 2, DEFAULT_BUDGET).unwrap().nodes() {
            let s = map.sigma(&spec, node).unwrap();
            assert_eq!(map.labels[s], InfoLabel::Point(node.consistent_states()[0]));
            let y = node.memory.last_observation();
            assert_eq!(spec.observations().label(y)[1..], spec.label_state(node.consistent_states()[0])[1..]);
        }
    }

    #[test]
    fn perfect_kind_rejects_hidden_system() {
        let spec = catalog::load("noisy_three");
        let err = build_info_state(&spec, &InfoStateKind::Perfect, 2).unwrap_err();
        assert_eq!(err.code(), "incompatible_kind");
    }

    #[test]
    fn window_pairs_previous_and_current_state() {
        let spec = catalog::load("perfect_chain");
        let (map, _) = build_info_state(&spec, &InfoStateKind::DeepWindow(1), 3).unwrap();
        for label in &map.labels {
            assert!(matches!(label, InfoLabel::Window(w) if w.len() == 2));
        }
        // pairs reachable in one step: slips, and moves to neighbours
        assert_eq!(map.len(), 3 + 4);
    }

    #[test]
    fn conditional_range_on_action_costs() {
        let spec = catalog::load("action_cost");
        let (map, kernel) = build_info_state(&spec, &InfoStateKind::ConditionalRange, 3).unwrap();
        assert!(kernel.is_indicator());
        for (_, _, node) in enumerate_memories(&spec, 2, DEFAULT_BUDGET).unwrap().nodes() {
            let s = map.sigma(&spec, node).unwrap();
            assert_eq!(map.labels[s].as_set().unwrap(), node.consistent_states().as_slice());
        }
    }

    #[test]
    fn accrued_function_on_hidden_costs() {
        let spec = catalog::load("hidden_fork");
        let (map, kernel) = build_info_state(&spec, &InfoStateKind::AccruedFunction, 4).unwrap();
        let report = verify_info_state(&spec, &map, &kernel, 4).unwrap();
        assert!(report.max_violation <= 1e-12);
        assert!(!kernel.is_indicator());
        assert!(kernel.rows.iter().flatten().flatten().any(|e| e.rho == -1.0));
    }

    #[test]
    fn merging_states_with_different_costs_is_infeasible() {
        let spec = catalog::load("two_behavior");
        let merged = CustomSigma::new("merged", |_, _| "pq".to_string());
        let (map, kernel) = explore_info_states(&spec, &InfoStateKind::Custom(merged.clone()), 10).unwrap();
        let report = verify_info_state(&spec, &map, &kernel, 2).unwrap();
        assert_eq!(report.max_violation, f64::INFINITY);
        assert!(report.witness.is_some());
        let err = build_info_state(&spec, &InfoStateKind::Custom(merged), 2).unwrap_err();
        assert_eq!(err.code(), "info_state_violation");
    }

    #[test]
    fn saturation_level() {
        let spec = catalog::load("hidden_fork");
        let (_, kernel) = build_info_state(&spec, &InfoStateKind::AccruedFunction, 2).unwrap();
        // a_max = 6, smallest penalty 1, gamma 1/2: 2^3 > 6
        assert_eq!(kernel.k_sat(), 3);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            InfoStateKind::Perfect,
            InfoStateKind::DeepWindow(2),
            InfoStateKind::AccruedFunction,
            InfoStateKind::ConditionalRange,
        ] {
            assert_eq!(InfoStateKind::parse(&k.name()).unwrap().name(), k.name());
        }
        assert!(InfoStateKind::parse("window:x").is_err());
    }
}
