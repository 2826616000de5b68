//! Pursuit gridworld: an agent chases a target it sees through vertical
//! observation noise, paying per move and a distance-weighted cost on stop.

pub mod bench;
pub mod env;
pub mod eval;
pub mod learn;
pub mod solve;

pub use bench::{run_benchmark, BenchReport};
pub use env::{env_step, PursuitConfig, PursuitState, Step};
pub use eval::{compare_agents, horizon_for_tail, worst_case_eval, ComparisonGrid, WorstCaseEval};
pub use learn::{risk_averse_q_learning, AgentStateKind, QLearnConfig, QTable, UpdateRule};
pub use solve::{exact_worst_case_solve, to_state_space_spec, ExactSolution};
