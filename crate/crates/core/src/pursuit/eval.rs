use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::report::{fmt12, Csv};

use super::env::*;
use super::learn::{risk_averse_q_learning, AgentState, AgentStateKind, QLearnConfig, QTable};
use super::solve::ExactSolution;

pub const EVAL_BUDGET: usize = 2_000_000;

/// Smallest horizon whose tail `gamma^H * c_max / (1 - gamma)` is at most `tail`.
pub fn horizon_for_tail(cfg: &PursuitConfig, tail: f64) -> usize {
    let a_max = cfg.a_max();
    if a_max <= tail {
        return 0;
    }
    ((tail / a_max).ln() / cfg.gamma.ln()).ceil() as usize
}

/// Truncated worst-case cost of a fixed policy over the joint space of true
/// target and agent state.
#[derive(Debug, Clone)]
pub struct WorstCaseEval {
    pub kind: AgentStateKind,
    pub horizon: usize,
    pub tail: f64,
    index: HashMap<(usize, AgentState), usize>,
    pub values: Vec<f64>,
    cfg: PursuitConfig,
}

impl WorstCaseEval {
    fn value(&self, target: usize, z: AgentState) -> f64 {
        if z == AgentState::Done {
            return 0.0;
        }
        self.values[self.index[&(target, z)]]
    }

    /// Worst case for a known start, over the first noise draw.
    pub fn start_cost(&self, agent: usize, target: usize) -> f64 {
        (0..self.cfg.noise.len())
            .map(|n| self.value(target, self.kind.initial(&self.cfg, agent, self.cfg.observe(target, n))))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Worst case over every start target that can produce `y0`.
    pub fn observed_start_cost(&self, agent: usize, y0: usize) -> f64 {
        let z = self.kind.initial(&self.cfg, agent, y0);
        self.cfg
            .target_start_cells()
            .into_iter()
            .filter(|&t| (0..self.cfg.noise.len()).any(|n| self.cfg.observe(t, n) == y0))
            .map(|t| self.value(t, z))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }
}

/// `H` rounds of worst-case policy evaluation; the true cost lies in
/// `[value, value + tail]`.
pub fn worst_case_eval(
    cfg: &PursuitConfig,
    kind: AgentStateKind,
    policy: &(dyn Fn(&AgentState) -> usize + Sync),
    horizon: usize,
) -> Result<WorstCaseEval> {
    cfg.validate()?;
    let mut nodes: Vec<(usize, AgentState)> = Vec::new();
    let mut index = HashMap::new();
    let mut queue = VecDeque::new();
    let mut visit = |key: (usize, AgentState), nodes: &mut Vec<_>, queue: &mut VecDeque<_>| -> Result<()> {
        if key.1 == AgentState::Done || index.contains_key(&key) {
            return Ok(());
        }
        if nodes.len() >= EVAL_BUDGET {
            return Err(Error::BudgetExceeded {
                budget: EVAL_BUDGET,
                reached: nodes.len() + 1,
            });
        }
        index.insert(key, nodes.len());
        nodes.push(key);
        queue.push_back(key);
        Ok(())
    };
    for a in cfg.agent_start_cells() {
        for t in cfg.target_start_cells() {
            for n in 0..cfg.noise.len() {
                visit((t, kind.initial(cfg, a, cfg.observe(t, n))), &mut nodes, &mut queue)?;
            }
        }
    }
    // Successor lists: terminal cost for stop, else (cost, node) per (w, n).
    enum Succ {
        Stop(f64),
        Move(Vec<usize>),
    }
    type Node = (usize, AgentState);
    let mut raw: Vec<(Node, usize, Vec<Node>)> = Vec::new();
    while let Some((t, z)) = queue.pop_front() {
        let u = policy(&z);
        if u > STOP {
            return Err(Error::UnknownLabel {
                label: u.to_string(),
                context: "pursuit actions".into(),
            });
        }
        let mut next = Vec::new();
        if u != STOP {
            for &w in &cfg.target_moves {
                let t2 = cfg.shift(t, w);
                for n in 0..cfg.noise.len() {
                    let key = (t2, kind.update(cfg, z, u, cfg.observe(t2, n)));
                    visit(key, &mut nodes, &mut queue)?;
                    next.push(key);
                }
            }
            next.sort();
            next.dedup();
        }
        raw.push(((t, z), u, next));
    }
    let succ: Vec<Succ> = {
        let mut by_node: Vec<Option<Succ>> = (0..nodes.len()).map(|_| None).collect();
        for ((t, z), u, next) in raw {
            let i = index[&(t, z)];
            let AgentState::Live { agent, .. } = z else { unreachable!() };
            by_node[i] = Some(if u == STOP {
                Succ::Stop(cfg.stop_cost(agent, t))
            } else {
                Succ::Move(next.iter().map(|k| index[k]).collect())
            });
        }
        by_node.into_iter().map(|s| s.expect("every node expanded")).collect()
    };

    let g = cfg.gamma;
    let mut values = vec![0.0; nodes.len()];
    for _ in 0..horizon {
        values = succ
            .par_iter()
            .map(|s| match s {
                Succ::Stop(c) => *c,
                Succ::Move(next) => cfg.move_cost + g * next.iter().map(|&j| values[j]).fold(0.0, f64::max),
            })
            .collect();
    }
    Ok(WorstCaseEval {
        kind,
        horizon,
        tail: g.powi(horizon as i32) * cfg.a_max(),
        index,
        values,
        cfg: cfg.clone(),
    })
}

pub fn eval_exact_policy(sol: &ExactSolution, horizon: usize) -> Result<WorstCaseEval> {
    let policy = |z: &AgentState| {
        let b = match *z {
            AgentState::Done => BeliefState::Done,
            AgentState::Live { agent, info } => BeliefState::Live { agent, targets: info },
        };
        sol.action(&b).unwrap_or(STOP)
    };
    worst_case_eval(&sol.space.cfg, AgentStateKind::Belief, &policy, horizon)
}

pub fn eval_q_policy(cfg: &PursuitConfig, table: &QTable, horizon: usize) -> Result<WorstCaseEval> {
    worst_case_eval(cfg, table.kind, &|z: &AgentState| table.greedy(z), horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub start_agent: String,
    pub start_target: String,
    #[serde(with = "crate::report::float12")]
    pub baseline_cost: f64,
    #[serde(with = "crate::report::float12")]
    pub ais_cost: f64,
    #[serde(with = "crate::report::float12")]
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonGrid {
    pub ais_agent: String,
    pub baseline_agent: String,
    pub horizon: usize,
    #[serde(with = "crate::report::float12")]
    pub tail: f64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonGrid {
    /// Fraction of starts where the belief agent is no worse.
    pub fn fraction_improved(&self) -> f64 {
        if self.rows.is_empty() {
            return 1.0;
        }
        let ok = self.rows.iter().filter(|r| r.improvement >= -1e-9).count();
        ok as f64 / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["start_agent", "start_target", "baseline_cost", "ais_cost", "improvement"]);
        for r in &self.rows {
            csv.row([
                r.start_agent.clone(),
                r.start_target.clone(),
                fmt12(r.baseline_cost),
                fmt12(r.ais_cost),
                fmt12(r.improvement),
            ]);
        }
        csv.finish()
    }
}

pub fn compare_tables(cfg: &PursuitConfig, ais: &QTable, ais_name: String, base: &QTable, base_name: String, horizon: usize) -> Result<ComparisonGrid> {
    let ea = eval_q_policy(cfg, ais, horizon)?;
    let eb = eval_q_policy(cfg, base, horizon)?;
    let mut rows = Vec::new();
    for a in cfg.agent_start_cells() {
        for t in cfg.target_start_cells() {
            let ais_cost = ea.start_cost(a, t);
            let baseline_cost = eb.start_cost(a, t);
            rows.push(ComparisonRow {
                start_agent: cell_label(cfg, a),
                start_target: cell_label(cfg, t),
                baseline_cost,
                ais_cost,
                improvement: baseline_cost - ais_cost,
            });
        }
    }
    Ok(ComparisonGrid {
        ais_agent: ais_name,
        baseline_agent: base_name,
        horizon,
        tail: ea.tail,
        rows,
    })
}

/// Trains both agents and compares their worst-case costs per start.
pub fn compare_agents(cfg: &PursuitConfig, ais: &QLearnConfig, baseline: &QLearnConfig, horizon: usize) -> Result<ComparisonGrid> {
    let (ta, tb) = rayon::join(|| risk_averse_q_learning(cfg, ais), || risk_averse_q_learning(cfg, baseline));
    compare_tables(cfg, &ta?, ais.describe(), &tb?, baseline.describe(), horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pursuit::solve::exact_worst_case_solve;

    #[test]
    fn immediate_stop_costs_farthest_consistent_target() {
        let cfg = PursuitConfig::grid(3, 3);
        let e = worst_case_eval(&cfg, AgentStateKind::Belief, &|_| STOP, 10).unwrap();
        let a = cfg.cell_index((0, 0));
        let t = cfg.cell_index((1, 1));
        // y0 ranges over (1,0), (1,1), (1,2); each fixes the true target here
        assert_eq!(e.start_cost(a, t), 20.0);
        // observing (1,1) is consistent with targets (1,0), (1,1), (1,2)
        assert_eq!(e.observed_start_cost(a, cfg.cell_index((1, 1))), 30.0);
    }

    #[test]
    fn exact_policy_matches_solver() {
        for (w, h) in [(2, 2), (3, 3)] {
            let cfg = PursuitConfig::grid(w, h);
            let sol = exact_worst_case_solve(&cfg, 10_000, 1e-10).unwrap();
            let hz = horizon_for_tail(&cfg, 0.5);
            let e = eval_exact_policy(&sol, hz).unwrap();
            for a in cfg.agent_start_cells() {
                for (a2, y, b) in super::super::solve::initial_beliefs(&cfg) {
                    if a2 != a {
                        continue;
                    }
                    let v = sol.value(&b).unwrap();
                    let got = e.observed_start_cost(a, y);
                    assert!(got <= v + 1e-6 && got >= v - e.tail - 1e-6, "{w}x{h} {got} vs {v}");
                }
            }
        }
    }

    #[test]
    fn any_policy_is_no_better_than_optimal() {
        let cfg = PursuitConfig::grid(2, 2);
        let sol = exact_worst_case_solve(&cfg, 10_000, 1e-10).unwrap();
        let hz = horizon_for_tail(&cfg, 0.5);
        for u in 0..ACTION_LABELS.len() {
            // always take u, stopping once the belief is a single cell
            let pol = move |z: &AgentState| match z {
                AgentState::Live { info, .. } if info.count_ones() == 1 => STOP,
                _ => u,
            };
            let e = worst_case_eval(&cfg, AgentStateKind::Belief, &pol, hz).unwrap();
            for (a, y, b) in super::super::solve::initial_beliefs(&cfg) {
                let v = sol.value(&b).unwrap();
                assert!(e.observed_start_cost(a, y) >= v - e.tail - 1e-6);
            }
        }
    }

    #[test]
    fn identical_agents_tie() {
        let cfg = PursuitConfig::grid(2, 2);
        let q = QLearnConfig {
            episodes: 300,
            ..Default::default()
        };
        let grid = compare_agents(&cfg, &q, &q, 50).unwrap();
        assert!(grid.rows.iter().all(|r| r.improvement == 0.0));
        assert_eq!(grid.fraction_improved(), 1.0);
    }
}
