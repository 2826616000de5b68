use serde::Serialize;

use crate::error::Result;
use crate::report::{float12, Csv, fmt12};

use super::env::*;
use super::eval::{compare_tables, eval_q_policy, horizon_for_tail, ComparisonGrid, WorstCaseEval};
use super::learn::{risk_averse_q_learning, QLearnConfig, QTable};
use super::solve::{exact_worst_case_solve, initial_beliefs, ExactSolution};

/// Allowed relative excess of the learned worst case over the optimum.
pub const RELATIVE_TOL: f64 = 0.05;
/// Share of starts on which the belief agent should be no worse.
pub const MAJORITY: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityRow {
    pub start_agent: String,
    pub first_observation: String,
    #[serde(with = "float12")]
    pub exact: f64,
    #[serde(with = "float12")]
    pub learned: f64,
    pub within: bool,
}

/// Learned greedy policy against the exact optimum, per initial belief:
/// `|learned - exact| <= RELATIVE_TOL * exact + tail`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityCheck {
    #[serde(with = "float12")]
    pub tail: f64,
    #[serde(with = "float12")]
    pub max_relative_gap: f64,
    pub pass: bool,
    pub rows: Vec<OptimalityRow>,
}

pub fn optimality_check(sol: &ExactSolution, learned: &WorstCaseEval) -> OptimalityCheck {
    let cfg = &sol.space.cfg;
    let tail = learned.tail + sol.error_bound();
    let mut rows = Vec::new();
    let mut max_rel: f64 = 0.0;
    for (a, y, b) in initial_beliefs(cfg) {
        let exact = sol.value(&b).expect("initial belief explored");
        let got = learned.observed_start_cost(a, y);
        let gap = (got - exact).abs();
        let rel = if exact > 0.0 { gap / exact } else if gap > tail { f64::INFINITY } else { 0.0 };
        max_rel = max_rel.max(rel);
        rows.push(OptimalityRow {
            start_agent: cell_label(cfg, a),
            first_observation: cell_label(cfg, y),
            exact,
            learned: got,
            within: gap <= RELATIVE_TOL * exact + tail,
        });
    }
    OptimalityCheck {
        tail,
        max_relative_gap: max_rel,
        pass: rows.iter().all(|r| r.within),
        rows,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub optimality: OptimalityCheck,
    #[serde(with = "float12")]
    pub fraction_improved: f64,
    #[serde(skip)]
    pub grid: ComparisonGrid,
    #[serde(skip)]
    pub ais_table: QTable,
    #[serde(skip)]
    pub baseline_table: QTable,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub width: i64,
    pub height: i64,
    pub ais_agent: String,
    pub baseline_agent: String,
    pub beliefs: usize,
    pub horizon: usize,
    pub seeds: Vec<SeedResult>,
    /// Every seed's learned policy is within tolerance of the optimum.
    pub optimality_pass: bool,
    /// Every seed has the belief agent no worse on at least `MAJORITY`.
    pub majority_pass: bool,
    #[serde(skip)]
    pub exact: ExactSolution,
}

impl BenchReport {
    pub fn summary_csv(&self) -> String {
        let mut csv = Csv::new(&["seed", "max_relative_gap", "within_tolerance", "fraction_improved"]);
        for s in &self.seeds {
            csv.row([
                s.seed.to_string(),
                fmt12(s.optimality.max_relative_gap),
                s.optimality.pass.to_string(),
                fmt12(s.fraction_improved),
            ]);
        }
        csv.finish()
    }
}

/// Exact solve, then per seed: train the belief agent and the baseline,
/// check the belief agent against the optimum and compare the two.
pub fn run_benchmark(
    cfg: &PursuitConfig,
    ais: &QLearnConfig,
    baseline: &QLearnConfig,
    seeds: &[u64],
    tail: f64,
) -> Result<BenchReport> {
    let exact = exact_worst_case_solve(cfg, 100_000, 1e-10)?;
    let horizon = horizon_for_tail(cfg, tail);
    let mut results = Vec::new();
    for &seed in seeds {
        let qa = QLearnConfig { seed, ..ais.clone() };
        let qb = QLearnConfig { seed, ..baseline.clone() };
        let (ta, tb) = (risk_averse_q_learning(cfg, &qa)?, risk_averse_q_learning(cfg, &qb)?);
        let optimality = optimality_check(&exact, &eval_q_policy(cfg, &ta, horizon)?);
        let grid = compare_tables(cfg, &ta, qa.describe(), &tb, qb.describe(), horizon)?;
        results.push(SeedResult {
            seed,
            optimality,
            fraction_improved: grid.fraction_improved(),
            grid,
            ais_table: ta,
            baseline_table: tb,
        });
    }
    Ok(BenchReport {
        width: cfg.width,
        height: cfg.height,
        ais_agent: ais.describe(),
        baseline_agent: baseline.describe(),
        beliefs: exact.space.len(),
        horizon,
        optimality_pass: results.iter().all(|r| r.optimality.pass),
        majority_pass: results.iter().all(|r| r.fraction_improved >= MAJORITY),
        seeds: results,
        exact,
    })
}
