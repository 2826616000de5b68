use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::general_dp::IterationReport;
use crate::metric::LabeledMetricSpace;
use crate::observable::{extract_flat_policy, iterate_tbar, FlatKernel, FlatValueTable};
use crate::report::{fmt12, Csv};
use crate::system::{Spaces, StateSpaceSpec};

use super::env::*;

pub const BELIEF_BUDGET: usize = 200_000;

/// Every belief reachable from some start configuration. Index 0 is the
/// terminal state.
#[derive(Debug, Clone)]
pub struct BeliefSpace {
    pub cfg: PursuitConfig,
    pub beliefs: Vec<BeliefState>,
    index: HashMap<BeliefState, usize>,
    /// Sorted indices of beliefs that can start an episode.
    pub initial: Vec<usize>,
}

impl BeliefSpace {
    pub fn len(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beliefs.is_empty()
    }

    pub fn index_of(&self, b: &BeliefState) -> Option<usize> {
        self.index.get(b).copied()
    }

    /// Successor beliefs of `b` under `u` with their step costs.
    pub fn successors(&self, b: BeliefState, u: usize) -> Vec<(f64, BeliefState)> {
        belief_successors(&self.cfg, b, u)
    }
}

fn belief_successors(cfg: &PursuitConfig, b: BeliefState, u: usize) -> Vec<(f64, BeliefState)> {
    let BeliefState::Live { agent, targets } = b else {
        return vec![(0.0, BeliefState::Done)];
    };
    if u == STOP {
        return targets_iter(targets).map(|t| (cfg.stop_cost(agent, t), BeliefState::Done)).collect();
    }
    let reach = predict_targets(cfg, targets);
    let ys: BTreeSet<usize> = targets_iter(reach)
        .flat_map(|t| (0..cfg.noise.len()).map(move |n| (t, n)))
        .map(|(t, n)| cfg.observe(t, n))
        .collect();
    ys.into_iter().map(|y| (cfg.move_cost, update_belief(cfg, b, u, y))).collect()
}

pub fn initial_beliefs(cfg: &PursuitConfig) -> Vec<(usize, usize, BeliefState)> {
    let mut out = Vec::new();
    for a in cfg.agent_start_cells() {
        let ys: BTreeSet<usize> = cfg
            .target_start_cells()
            .into_iter()
            .flat_map(|t| (0..cfg.noise.len()).map(move |n| (t, n)))
            .map(|(t, n)| cfg.observe(t, n))
            .collect();
        for y in ys {
            out.push((a, y, initial_belief(cfg, a, y)));
        }
    }
    out
}

pub fn explore_beliefs(cfg: &PursuitConfig, budget: usize) -> Result<BeliefSpace> {
    cfg.validate()?;
    let mut beliefs = vec![BeliefState::Done];
    let mut index = HashMap::from([(BeliefState::Done, 0)]);
    let mut queue = VecDeque::new();
    let mut initial = BTreeSet::new();
    for (_, _, b) in initial_beliefs(cfg) {
        let i = *index.entry(b).or_insert_with(|| {
            beliefs.push(b);
            queue.push_back(b);
            beliefs.len() - 1
        });
        initial.insert(i);
    }
    while let Some(b) = queue.pop_front() {
        for u in 0..ACTION_LABELS.len() {
            for (_, next) in belief_successors(cfg, b, u) {
                if let Entry::Vacant(e) = index.entry(next) {
                    if beliefs.len() >= budget {
                        return Err(Error::BudgetExceeded {
                            budget,
                            reached: beliefs.len() + 1,
                        });
                    }
                    e.insert(beliefs.len());
                    beliefs.push(next);
                    queue.push_back(next);
                }
            }
        }
    }
    Ok(BeliefSpace {
        cfg: cfg.clone(),
        beliefs,
        index,
        initial: initial.into_iter().collect(),
    })
}

/// The flat worst-case kernel on the belief space.
pub fn belief_kernel(space: &BeliefSpace) -> Result<FlatKernel> {
    let cfg = &space.cfg;
    let mut cost_set: Vec<f64> = vec![0.0, cfg.move_cost];
    let cells = cfg.free_cells();
    for &a in &cells {
        for &t in &cells {
            cost_set.push(cfg.stop_cost(a, t));
        }
    }
    cost_set.sort_by(f64::total_cmp);
    cost_set.dedup();
    let cost_idx = |c: f64| cost_set.iter().position(|&v| v == c).expect("cost listed");

    let rows = space
        .beliefs
        .iter()
        .map(|&b| {
            (0..ACTION_LABELS.len())
                .map(|u| {
                    let mut row: Vec<(usize, usize)> = belief_successors(cfg, b, u)
                        .into_iter()
                        .map(|(c, next)| (cost_idx(c), space.index[&next]))
                        .collect();
                    row.sort_unstable();
                    row.dedup();
                    row
                })
                .collect()
        })
        .collect();
    let labels = space.beliefs.iter().map(|&b| belief_label(cfg, b));
    Ok(FlatKernel {
        rows,
        gamma: cfg.gamma,
        a_max: cfg.a_max(),
        cost_values: cost_set,
        states: Arc::new(LabeledMetricSpace::discrete(labels)?),
    })
}

#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub space: BeliefSpace,
    pub kernel: FlatKernel,
    pub values: FlatValueTable,
    pub policy: Vec<usize>,
    pub report: IterationReport,
}

impl ExactSolution {
    pub fn value(&self, b: &BeliefState) -> Option<f64> {
        self.space.index_of(b).map(|i| self.values.get(i))
    }

    pub fn action(&self, b: &BeliefState) -> Option<usize> {
        self.space.index_of(b).map(|i| self.policy[i])
    }

    /// Sup-norm distance to the fixed point implied by the last update.
    pub fn error_bound(&self) -> f64 {
        let last = self.report.deltas.last().copied().unwrap_or(f64::INFINITY);
        self.kernel.gamma * last / (1.0 - self.kernel.gamma)
    }

    /// Value and action per initial belief.
    pub fn to_csv(&self) -> String {
        let cfg = &self.space.cfg;
        let mut csv = Csv::new(&["start_agent", "first_observation", "belief", "value", "action"]);
        for (a, y, b) in initial_beliefs(cfg) {
            let i = self.space.index[&b];
            csv.row([
                cell_label(cfg, a),
                cell_label(cfg, y),
                belief_label(cfg, b),
                fmt12(self.values.get(i)),
                ACTION_LABELS[self.policy[i]].to_string(),
            ]);
        }
        csv.finish()
    }
}

/// Worst-case value iteration over target-belief sets.
pub fn exact_worst_case_solve(cfg: &PursuitConfig, max_iters: usize, tol: f64) -> Result<ExactSolution> {
    let space = explore_beliefs(cfg, BELIEF_BUDGET)?;
    let kernel = belief_kernel(&space)?;
    let (values, report) = iterate_tbar(&kernel, max_iters, Some(tol))?;
    let policy = extract_flat_policy(&kernel, &values)?;
    Ok(ExactSolution {
        space,
        kernel,
        values,
        policy,
        report,
    })
}

/// The pursuit problem as a generic system over `(agent, target)` pairs plus
/// a terminal state. The agent's own cell is part of every observation.
pub fn to_state_space_spec(cfg: &PursuitConfig) -> Result<StateSpaceSpec> {
    cfg.validate()?;
    let cells = cfg.free_cells();
    let nc = cells.len();
    let pos: HashMap<usize, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let pair = |a: usize, t: usize| 1 + pos[&a] * nc + pos[&t];

    let mut states = vec!["done".to_string()];
    let mut obs = vec!["done".to_string()];
    for &a in &cells {
        for &t in &cells {
            states.push(format!("{}/{}", cell_label(cfg, a), cell_label(cfg, t)));
            obs.push(format!("{}/{}", cell_label(cfg, a), cell_label(cfg, t)));
        }
    }
    let decode = |x: usize| (cells[(x - 1) / nc], cells[(x - 1) % nc]);
    let spaces = Spaces {
        states: LabeledMetricSpace::discrete(states)?,
        actions: LabeledMetricSpace::discrete(ACTION_LABELS)?,
        disturbances: LabeledMetricSpace::discrete((0..cfg.target_moves.len()).map(|w| format!("w{w}")))?,
        noises: LabeledMetricSpace::discrete((0..cfg.noise.len()).map(|n| format!("n{n}")))?,
        observations: LabeledMetricSpace::discrete(obs)?,
    };
    let mut initial = Vec::new();
    for a in cfg.agent_start_cells() {
        for t in cfg.target_start_cells() {
            initial.push(pair(a, t));
        }
    }
    StateSpaceSpec::from_fns(
        format!("pursuit_{}x{}", cfg.width, cfg.height),
        spaces,
        initial,
        |x, u, w| {
            if x == 0 || u == STOP {
                return 0;
            }
            let (a, t) = decode(x);
            pair(cfg.shift(a, TARGET_MOVES[u]), cfg.shift(t, cfg.target_moves[w]))
        },
        |x, n| {
            if x == 0 {
                return 0;
            }
            let (a, t) = decode(x);
            pair(a, cfg.observe(t, n))
        },
        |x, u| match x {
            0 => 0.0,
            _ if u == STOP => {
                let (a, t) = decode(x);
                cfg.stop_cost(a, t)
            }
            _ => cfg.move_cost,
        },
        cfg.gamma,
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_is_free() {
        let sol = exact_worst_case_solve(&PursuitConfig::grid(1, 1), 2000, 1e-10).unwrap();
        for &i in &sol.space.initial {
            assert_eq!(sol.values.get(i), 0.0);
            assert_eq!(sol.policy[i], STOP);
        }
    }

    #[test]
    fn co_located_start_on_strip() {
        let mut cfg = PursuitConfig::grid(2, 1);
        cfg.agent_starts = vec![(0, 0)];
        cfg.target_starts = vec![(0, 0)];
        let sol = exact_worst_case_solve(&cfg, 2000, 1e-10).unwrap();
        assert_eq!(sol.space.initial.len(), 1);
        assert_eq!(sol.values.get(sol.space.initial[0]), 0.0);
    }

    #[test]
    fn known_target_in_square() {
        // Agent at (0,0), target known at (1,0). Stopping now costs 10; a
        // move cannot pin down a target that keeps moving.
        let mut cfg = PursuitConfig::grid(2, 2);
        cfg.agent_starts = vec![(0, 0)];
        cfg.target_starts = vec![(1, 0)];
        let sol = exact_worst_case_solve(&cfg, 5000, 1e-10).unwrap();
        let v: Vec<f64> = sol.space.initial.iter().map(|&i| sol.values.get(i)).collect();
        assert!(v.iter().all(|&x| x > 0.0 && x <= 20.0 + 1e-9), "{v:?}");
    }

    #[test]
    fn converges_on_three_by_three() {
        let sol = exact_worst_case_solve(&PursuitConfig::grid(3, 3), 5000, 1e-9).unwrap();
        assert!(sol.report.converged);
        assert!(sol.space.len() > 10);
        let c_max = PursuitConfig::grid(3, 3).c_max();
        assert!(sol.values.values.iter().all(|&v| (0.0..=c_max + 1e-9).contains(&v)));
    }

    #[test]
    fn tiny_grid_budget() {
        let err = explore_beliefs(&PursuitConfig::grid(3, 3), 5).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { budget: 5, .. }));
    }
}
