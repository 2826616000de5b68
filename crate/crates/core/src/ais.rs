//! Approximate information states by metric aggregation of exact
//! consistent-set states, with measured epsilon and value/policy-loss
//! certificates.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::info_state::{InfoStateMap, Witness};
use crate::metric::LabeledMetricSpace;
use crate::observable::{
    evaluate_flat_policy, extract_flat_policy, iterate_tbar, iterates_tbar, FlatKernel, FlatValueTable,
};
use crate::oracle::{envelope_width, memory_tree, solve_on_tree, evaluate_on_tree};
use crate::observable::FlatPolicyStrategy;
use crate::report::{float12, fmt12};
use crate::system::{enumerate_memories, memory_successors, Memory, MemoryNode, StateSpaceSpec, DEFAULT_BUDGET};
use crate::uncertain::hausdorff_by;

/// Exact states grouped around representatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub radius: f64,
    /// Exact state index of each representative.
    pub representatives: Vec<usize>,
    /// Representative position for each exact state.
    pub assign: Vec<usize>,
    /// Metric on representatives, inherited from the exact states.
    pub space: Arc<LabeledMetricSpace>,
}

impl Aggregation {
    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    pub fn identity(exact: &Arc<LabeledMetricSpace>) -> Self {
        let n = exact.len();
        Aggregation {
            radius: 0.0,
            representatives: (0..n).collect(),
            assign: (0..n).collect(),
            space: exact.clone(),
        }
    }
}

/// Greedy cover in state order: a state joins its nearest existing
/// representative within `radius`, otherwise it opens a new one. The
/// approximate row of a representative is the union of its members' rows
/// with successors mapped to representatives.
pub fn compress(kernel: &FlatKernel, radius: f64) -> Result<(Aggregation, FlatKernel)> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidConfig(format!("radius must be nonnegative, got {radius}")));
    }
    let exact = &kernel.states;
    let n = exact.len();
    let mut reps: Vec<usize> = Vec::new();
    let mut assign = vec![usize::MAX; n];
    for s in 0..n {
        let nearest = reps
            .iter()
            .enumerate()
            .map(|(i, &r)| (i, exact.d(s, r)))
            .filter(|&(_, d)| d <= radius)
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            });
        assign[s] = match nearest {
            Some((i, _)) => i,
            None => {
                reps.push(s);
                reps.len() - 1
            }
        };
    }
    let m = reps.len();
    let mut dist = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            dist[i * m + j] = exact.d(reps[i], reps[j]);
        }
    }
    let labels = reps.iter().map(|&r| exact.label(r).to_string()).collect();
    let space = Arc::new(LabeledMetricSpace::from_trusted_table(labels, dist)?);
    let nu = kernel.num_actions();
    let mut rows = vec![vec![BTreeSet::new(); nu]; m];
    for s in 0..n {
        for u in 0..nu {
            for &(c, next) in kernel.row(s, u) {
                rows[assign[s]][u].insert((c, assign[next]));
            }
        }
    }
    let approx = FlatKernel {
        rows: rows
            .into_iter()
            .map(|r| r.into_iter().map(|set| set.into_iter().collect()).collect())
            .collect(),
        gamma: kernel.gamma,
        a_max: kernel.a_max,
        cost_values: kernel.cost_values.clone(),
        states: space.clone(),
    };
    Ok((
        Aggregation {
            radius,
            representatives: reps,
            assign,
            space,
        },
        approx,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonReport {
    pub route: String,
    #[serde(with = "float12")]
    pub epsilon: f64,
    pub depth: usize,
    pub checked: usize,
    pub witness: Option<Witness>,
    #[serde(with = "float12::option")]
    pub delta: Option<f64>,
    #[serde(with = "float12::option")]
    pub l_psi: Option<f64>,
    #[serde(skip)]
    pub witness_memory: Option<(Memory, usize)>,
}

/// `[[C, S-hat' | m, u]]` as `(cost, representative)` pairs.
pub fn memory_range(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    agg: &Aggregation,
    node: &MemoryNode,
    u: usize,
) -> Result<Vec<(usize, usize)>> {
    let succ = memory_successors(spec, node, u)?;
    let mut out = BTreeSet::new();
    for e in &succ.edges {
        out.insert((e.cost, agg.assign[map.sigma(spec, &succ.nodes[e.child])?]));
    }
    Ok(out.into_iter().collect())
}

fn memory_gap(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    agg: &Aggregation,
    approx: &FlatKernel,
    node: &MemoryNode,
    u: usize,
) -> Result<f64> {
    let measured = memory_range(spec, map, agg, node, u)?;
    let s_hat = agg.assign[map.sigma(spec, node)?];
    Ok(approx.row_distance(&measured, approx.row(s_hat, u)))
}

/// Largest Hausdorff gap between memory-conditioned and state-conditioned
/// `(cost, next representative)` ranges over memories of depth `<= depth`.
pub fn epsilon_of(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    agg: &Aggregation,
    approx: &FlatKernel,
    depth: usize,
) -> Result<EpsilonReport> {
    let tree = enumerate_memories(spec, depth, DEFAULT_BUDGET)?;
    let mut report = EpsilonReport {
        route: "direct".into(),
        epsilon: 0.0,
        depth,
        checked: 0,
        witness: None,
        delta: None,
        l_psi: None,
        witness_memory: None,
    };
    for (_, _, node) in tree.nodes() {
        for u in 0..spec.num_actions() {
            report.checked += 1;
            let gap = memory_gap(spec, map, agg, approx, node, u)?;
            if gap > report.epsilon {
                report.epsilon = gap;
                report.witness = Some(Witness {
                    memory: node.memory.trace(spec),
                    action: spec.label_action(u).to_string(),
                    detail: format!("Hausdorff gap {}", fmt12(gap)),
                });
                report.witness_memory = Some((node.memory.clone(), u));
            }
        }
    }
    Ok(report)
}

/// Recomputes the gap at the witness of a report.
pub fn recheck_witness(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    agg: &Aggregation,
    approx: &FlatKernel,
    report: &EpsilonReport,
) -> Result<f64> {
    match &report.witness_memory {
        None => Ok(0.0),
        Some((memory, u)) => {
            let node = crate::system::replay(spec, memory)
                .ok_or_else(|| Error::InfeasibleMemory(memory.trace(spec)))?;
            memory_gap(spec, map, agg, approx, &node, *u)
        }
    }
}

/// Same quantity computed class by class from the exact kernel; equals the
/// memory-level value when the exact states satisfy their defining equality.
pub fn epsilon_of_kernel(exact: &FlatKernel, agg: &Aggregation, approx: &FlatKernel) -> f64 {
    let mut eps: f64 = 0.0;
    for s in 0..exact.num_states() {
        for u in 0..exact.num_actions() {
            let mapped: Vec<(usize, usize)> = exact
                .row(s, u)
                .iter()
                .map(|&(c, n)| (c, agg.assign[n]))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            eps = eps.max(approx.row_distance(&mapped, approx.row(agg.assign[s], u)));
        }
    }
    eps
}

/// Running maximum of the difference quotient over every iterate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    #[serde(with = "float12")]
    pub l_lambda: f64,
    /// Iterate attaining the maximum.
    pub attained_at: usize,
    #[serde(with = "float12")]
    pub l_hat: f64,
}

pub fn lipschitz_estimate(space: &LabeledMetricSpace, iterates: &[FlatValueTable], gamma: f64) -> LipschitzEstimate {
    let mut best = (0.0, 0);
    for (n, it) in iterates.iter().enumerate() {
        let l = crate::uncertain::lipschitz_constant(space, &it.values);
        if l > best.0 {
            best = (l, n);
        }
    }
    LipschitzEstimate {
        l_lambda: best.0,
        attained_at: best.1,
        l_hat: (gamma * best.0).max(1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialGap {
    pub observation: String,
    #[serde(with = "float12")]
    pub approx_value: f64,
    #[serde(with = "float12")]
    pub oracle_lower: f64,
    #[serde(with = "float12")]
    pub oracle_upper: f64,
    /// Largest `|V_0 - Lambda-hat|` consistent with the oracle interval.
    #[serde(with = "float12")]
    pub value_gap: f64,
    #[serde(with = "float12")]
    pub policy_lower: f64,
    #[serde(with = "float12")]
    pub policy_upper: f64,
    /// Largest `|V_0^g - V_0|` consistent with both intervals.
    #[serde(with = "float12")]
    pub policy_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaCheck {
    pub horizon: usize,
    pub t: usize,
    #[serde(with = "float12")]
    pub beta: f64,
    #[serde(with = "float12")]
    pub max_gap: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub system: String,
    #[serde(with = "float12")]
    pub radius: f64,
    pub representatives: usize,
    pub epsilon: EpsilonReport,
    pub lipschitz: LipschitzEstimate,
    pub iterations: usize,
    pub horizon: usize,
    #[serde(with = "float12")]
    pub envelope_width: f64,
    #[serde(with = "float12")]
    pub value_bound: f64,
    #[serde(with = "float12")]
    pub policy_bound: f64,
    pub initial: Vec<InitialGap>,
    pub beta: Vec<BetaCheck>,
    pub value_pass: bool,
    pub policy_pass: bool,
    pub beta_pass: bool,
}

impl Certificate {
    pub fn pass(&self) -> bool {
        self.value_pass && self.policy_pass && self.beta_pass
    }

    pub fn summary(&self) -> String {
        let verdict = |b: bool| if b { "PASS" } else { "FAIL" };
        let worst_value = self.initial.iter().map(|g| g.value_gap).fold(0.0, f64::max);
        let worst_policy = self.initial.iter().map(|g| g.policy_gap).fold(0.0, f64::max);
        format!(
            "system {} radius {} ({} representatives)\n\
             epsilon {} (depth {}), L_hat {}\n\
             value gap {} <= bound {} + width {}: {}\n\
             policy gap {} <= bound {} + width {}: {}\n\
             beta recursion up to T={}: {}\n",
            self.system,
            fmt12(self.radius),
            self.representatives,
            fmt12(self.epsilon.epsilon),
            self.epsilon.depth,
            fmt12(self.lipschitz.l_hat),
            fmt12(worst_value),
            fmt12(self.value_bound),
            fmt12(self.envelope_width),
            verdict(self.value_pass),
            fmt12(worst_policy),
            fmt12(self.policy_bound),
            fmt12(self.envelope_width),
            verdict(self.policy_pass),
            self.beta.iter().map(|b| b.horizon).max().unwrap_or(0),
            verdict(self.beta_pass),
        )
    }
}

pub struct CertifyParams {
    /// Horizon of the oracle interval for the initial gaps; `None` picks the
    /// smallest with `gamma^(T+1) a_max <= 1e-3 bound` (or `<= 1e-3` when the
    /// bound is zero), capped at `max_horizon`.
    pub horizon: Option<usize>,
    pub max_horizon: usize,
    /// Largest horizon of the per-step recursion check.
    pub beta_horizon: usize,
    pub max_iters: usize,
    pub tol: f64,
}

/// Smallest horizon with `gamma^(T+1) a_max <= target`.
pub fn horizon_for(gamma: f64, a_max: f64, target: f64) -> usize {
    let mut t = 0;
    while gamma.powi(t as i32 + 1) * a_max > target {
        t += 1;
    }
    t
}

/// Value and policy-loss certificate for an aggregation.
pub fn aggregation_certificate(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    agg: &Aggregation,
    approx: &FlatKernel,
    epsilon: EpsilonReport,
    params: &CertifyParams,
) -> Result<Certificate> {
    let gamma = spec.gamma();
    let (lambda, report) = iterate_tbar(approx, params.max_iters, Some(params.tol))?;
    let beta_iterates = iterates_tbar(approx, params.beta_horizon + 1)?;
    let mut all = beta_iterates.clone();
    all.push(lambda.clone());
    let lipschitz = lipschitz_estimate(&agg.space, &all, gamma);
    let eps = epsilon.epsilon;
    let value_bound = lipschitz.l_hat * eps / (1.0 - gamma);
    let policy_bound = 2.0 * value_bound;
    let horizon = params.horizon.unwrap_or_else(|| {
        let target = if value_bound > 0.0 { 1e-3 * value_bound } else { 1e-3 };
        horizon_for(gamma, spec.a_max(), target).min(params.max_horizon)
    });

    let tree = memory_tree(spec, horizon.max(params.beta_horizon))?;
    let table = solve_on_tree(spec, tree.clone(), horizon)?;
    let policy = extract_flat_policy(approx, &lambda)?;
    let strategy = FlatPolicyStrategy {
        spec,
        map,
        assign: &agg.assign,
        policy: &policy,
    };
    let eval = evaluate_on_tree(spec, &strategy, tree.clone(), horizon)?;
    let width = envelope_width(gamma, spec.c_min(), spec.c_max(), horizon);
    let env = table.envelope();
    let env_g = eval.envelope();
    let mut initial = Vec::new();
    for (i, node) in tree.levels[0].iter().enumerate() {
        let s_hat = agg.assign[map.sigma(spec, node)?];
        let point = lambda.get(s_hat);
        let (lo, hi) = env[0][i];
        let (glo, ghi) = env_g[0][i];
        initial.push(InitialGap {
            observation: spec.observations().label(node.memory.observations[0]).to_string(),
            approx_value: point,
            oracle_lower: lo,
            oracle_upper: hi,
            value_gap: (point - lo).abs().max((point - hi).abs()),
            policy_lower: glo,
            policy_upper: ghi,
            policy_gap: (ghi - lo).abs().max((glo - hi).abs()),
        });
    }
    let value_pass = initial.iter().all(|g| g.value_gap <= value_bound + width + 1e-9);
    let policy_pass = initial.iter().all(|g| g.policy_gap <= policy_bound + width + 1e-9);

    let step = lipschitz.l_hat * eps;
    let mut beta = Vec::new();
    for horizon in 0..=params.beta_horizon {
        let jt = solve_on_tree(spec, tree.clone(), horizon)?;
        // beta_T = gamma^T step, beta_t = beta_{t+1} + gamma^t step
        let mut b = vec![0.0; horizon + 1];
        for t in (0..=horizon).rev() {
            let tail = if t == horizon { 0.0 } else { b[t + 1] };
            b[t] = tail + gamma.powi(t as i32) * step;
        }
        let mut max_gap = vec![0.0f64; horizon + 1];
        for (t, i, node) in jt.tree.nodes().filter(|(t, _, _)| *t <= horizon) {
            let s_hat = agg.assign[map.sigma(spec, node)?];
            let rebuilt = gamma.powi(t as i32) * beta_iterates[horizon - t + 1].get(s_hat) + node.sup_accrued();
            max_gap[t] = max_gap[t].max((jt.value(t, i) - rebuilt).abs());
        }
        for t in 0..=horizon {
            beta.push(BetaCheck {
                horizon,
                t,
                beta: b[t],
                max_gap: max_gap[t],
                holds: max_gap[t] <= b[t] + 1e-9,
            });
        }
    }
    let beta_pass = beta.iter().all(|b| b.holds);
    Ok(Certificate {
        system: spec.name().to_string(),
        radius: agg.radius,
        representatives: agg.len(),
        epsilon,
        lipschitz,
        iterations: report.iterations,
        horizon,
        envelope_width: width,
        value_bound,
        policy_bound,
        initial,
        beta,
        value_pass,
        policy_pass,
        beta_pass,
    })
}

/// `psi(s-hat, u, y) -> s-hat'` read off enumerated transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTable {
    pub map: BTreeMap<(usize, usize, usize), usize>,
}

/// Collects the update and fails on the first transition where the next
/// representative is not a function of `(s-hat, u, y)`.
pub fn derive_update(spec: &StateSpaceSpec, map: &InfoStateMap, agg: &Aggregation, depth: usize) -> Result<UpdateTable> {
    let tree = enumerate_memories(spec, depth, DEFAULT_BUDGET)?;
    let mut table = BTreeMap::new();
    for (_, _, node) in tree.nodes() {
        let s_hat = agg.assign[map.sigma(spec, node)?];
        for u in 0..spec.num_actions() {
            for child in memory_successors(spec, node, u)?.nodes {
                let y = child.memory.last_observation();
                let next = agg.assign[map.sigma(spec, &child)?];
                if let Some(&prev) = table.get(&(s_hat, u, y)) {
                    if prev != next {
                        return Err(Error::UpdateViolation {
                            memory: node.memory.trace(spec),
                            action: spec.label_action(u).to_string(),
                            observation: spec.observations().label(y).to_string(),
                            detail: format!(
                                "next state `{}` differs from `{}` recorded earlier",
                                agg.space.label(next),
                                agg.space.label(prev)
                            ),
                        });
                    }
                } else {
                    table.insert((s_hat, u, y), next);
                }
            }
        }
    }
    Ok(UpdateTable { map: table })
}

/// `max(1, L)` where `L` bounds how far `psi` moves its output relative to
/// moves of its state or observation argument.
pub fn update_lipschitz(spec: &StateSpaceSpec, agg: &Aggregation, psi: &UpdateTable) -> f64 {
    let mut l: f64 = 0.0;
    let entries: Vec<(&(usize, usize, usize), &usize)> = psi.map.iter().collect();
    let mut ratio = |din: f64, dout: f64| {
        if din > 0.0 {
            l = l.max(dout / din);
        } else if dout > 0.0 {
            l = f64::INFINITY;
        }
    };
    for (i, (&(s1, u1, y1), &n1)) in entries.iter().enumerate() {
        for (&(s2, u2, y2), &n2) in &entries[i + 1..] {
            if u1 != u2 {
                continue;
            }
            let dout = agg.space.d(n1, n2);
            if y1 == y2 {
                ratio(agg.space.d(s1, s2), dout);
            }
            if s1 == s2 {
                ratio(spec.observations().d(y1, y2), dout);
            }
        }
    }
    l.max(1.0)
}

/// `(cost, observation)` ranges of a memory under an action.
fn cost_obs_range(spec: &StateSpaceSpec, node: &MemoryNode, u: usize) -> Result<BTreeSet<(usize, usize)>> {
    let succ = memory_successors(spec, node, u)?;
    Ok(succ
        .edges
        .iter()
        .map(|e| (e.cost, succ.nodes[e.child].memory.last_observation()))
        .collect())
}

/// Appendix-style route: checks the state-like update, measures the
/// `(cost, next observation)` gap `delta` and returns `epsilon = L_psi delta`.
pub fn alternate_characterization_check(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    agg: &Aggregation,
    depth: usize,
) -> Result<EpsilonReport> {
    let psi = derive_update(spec, map, agg, depth + 1)?;
    let l_psi = update_lipschitz(spec, agg, &psi);
    // state-conditioned ranges: union over members, read from each exact
    // state's representative memory
    let nu = spec.num_actions();
    let mut rows: Vec<Vec<BTreeSet<(usize, usize)>>> = vec![vec![BTreeSet::new(); nu]; agg.len()];
    for (s, rep) in map.representatives.iter().enumerate() {
        for (u, row) in rows[agg.assign[s]].iter_mut().enumerate() {
            row.extend(cost_obs_range(spec, rep, u)?);
        }
    }
    let costs = spec.cost_values();
    let dist = |p: &(usize, usize), q: &(usize, usize)| {
        (costs[p.0] - costs[q.0]).abs() + spec.observations().d(p.1, q.1)
    };
    let tree = enumerate_memories(spec, depth, DEFAULT_BUDGET)?;
    let mut report = EpsilonReport {
        route: "alternate".into(),
        epsilon: 0.0,
        depth,
        checked: 0,
        witness: None,
        delta: Some(0.0),
        l_psi: Some(l_psi),
        witness_memory: None,
    };
    let mut delta: f64 = 0.0;
    for (_, _, node) in tree.nodes() {
        let s_hat = agg.assign[map.sigma(spec, node)?];
        for u in 0..nu {
            report.checked += 1;
            let measured: Vec<_> = cost_obs_range(spec, node, u)?.into_iter().collect();
            let expected: Vec<_> = rows[s_hat][u].iter().copied().collect();
            let gap = hausdorff_by(&measured, &expected, dist)?;
            if gap > delta {
                delta = gap;
                report.witness = Some(Witness {
                    memory: node.memory.trace(spec),
                    action: spec.label_action(u).to_string(),
                    detail: format!("(cost, observation) gap {}", fmt12(gap)),
                });
                report.witness_memory = Some((node.memory.clone(), u));
            }
        }
    }
    report.delta = Some(delta);
    report.epsilon = l_psi * delta;
    Ok(report)
}

/// Full pipeline at one radius: exact states, aggregation, measured epsilon
/// and certificate.
pub fn certify(
    spec: &StateSpaceSpec,
    radius: f64,
    depth: usize,
    params: &CertifyParams,
) -> Result<(Aggregation, FlatKernel, Certificate)> {
    let (map, exact) = crate::observable::build_observable_state(spec, depth)?;
    let (agg, approx) = compress(&exact, radius)?;
    let eps = epsilon_of(spec, &map, &agg, &approx, depth)?;
    let cert = aggregation_certificate(spec, &map, &agg, &approx, eps, params)?;
    Ok((agg, approx, cert))
}

/// Evaluates a representative-level policy through the memory oracle.
pub fn evaluate_aggregated_policy(
    spec: &StateSpaceSpec,
    map: &InfoStateMap,
    agg: &Aggregation,
    policy: &[usize],
    horizon: usize,
) -> Result<crate::oracle::FiniteHorizonTable> {
    evaluate_flat_policy(spec, map, &agg.assign, policy, horizon)
}
