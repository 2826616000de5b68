use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Cell = (i64, i64);

pub const TARGET_MOVES: [Cell; 5] = [(-1, 0), (1, 0), (0, 0), (0, 1), (0, -1)];
pub const NOISE: [Cell; 3] = [(0, -1), (0, 0), (0, 1)];
pub const ACTION_LABELS: [&str; 6] = ["left", "right", "stay", "up", "down", "stop"];
pub const STOP: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PursuitConfig {
    pub width: i64,
    pub height: i64,
    pub obstacles: Vec<Cell>,
    /// Empty means every free cell.
    pub agent_starts: Vec<Cell>,
    pub target_starts: Vec<Cell>,
    pub move_cost: f64,
    pub terminal_weight: f64,
    pub target_moves: Vec<Cell>,
    pub noise: Vec<Cell>,
    pub gamma: f64,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        PursuitConfig {
            width: 5,
            height: 5,
            obstacles: Vec::new(),
            agent_starts: Vec::new(),
            target_starts: Vec::new(),
            move_cost: 2.0,
            terminal_weight: 10.0,
            target_moves: TARGET_MOVES.to_vec(),
            noise: NOISE.to_vec(),
            gamma: 0.97,
        }
    }
}

impl PursuitConfig {
    pub fn grid(width: i64, height: i64) -> Self {
        PursuitConfig {
            width,
            height,
            ..Default::default()
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = vec![(0, 0)];
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let cfg: PursuitConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 || self.width * self.height > 64 {
            return Err(Error::InvalidConfig(format!(
                "grid {}x{} must have between 1 and 64 cells",
                self.width, self.height
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if !(self.move_cost >= 0.0 && self.terminal_weight >= 0.0) {
            return Err(Error::InvalidConfig("costs must be nonnegative".into()));
        }
        if self.target_moves.is_empty() || self.noise.is_empty() {
            return Err(Error::InvalidConfig("move and noise sets must be nonempty".into()));
        }
        for &c in self.agent_starts.iter().chain(&self.target_starts) {
            if !self.is_free(c) {
                return Err(Error::InvalidConfig(format!("start cell {c:?} is off-grid or an obstacle")));
            }
        }
        if self.free_cells().is_empty() {
            return Err(Error::InvalidConfig("grid has no free cell".into()));
        }
        Ok(())
    }

    pub fn is_free(&self, (x, y): Cell) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height && !self.obstacles.contains(&(x, y))
    }

    pub fn num_cells(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn cell_index(&self, (x, y): Cell) -> usize {
        (y * self.width + x) as usize
    }

    pub fn cell_at(&self, i: usize) -> Cell {
        (i as i64 % self.width, i as i64 / self.width)
    }

    pub fn free_cells(&self) -> Vec<usize> {
        (0..self.num_cells()).filter(|&i| self.is_free(self.cell_at(i))).collect()
    }

    pub fn agent_start_cells(&self) -> Vec<usize> {
        self.starts(&self.agent_starts)
    }

    pub fn target_start_cells(&self) -> Vec<usize> {
        self.starts(&self.target_starts)
    }

    fn starts(&self, cells: &[Cell]) -> Vec<usize> {
        if cells.is_empty() {
            self.free_cells()
        } else {
            let set: BTreeSet<usize> = cells.iter().map(|&c| self.cell_index(c)).collect();
            set.into_iter().collect()
        }
    }

    /// `cell + delta` when that is a free cell, else `cell`.
    pub fn shift(&self, cell: usize, (dx, dy): Cell) -> usize {
        let (x, y) = self.cell_at(cell);
        let moved = (x + dx, y + dy);
        if self.is_free(moved) {
            self.cell_index(moved)
        } else {
            cell
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> i64 {
        let (ax, ay) = self.cell_at(a);
        let (bx, by) = self.cell_at(b);
        (ax - bx).abs() + (ay - by).abs()
    }

    pub fn stop_cost(&self, agent: usize, target: usize) -> f64 {
        self.terminal_weight * self.distance(agent, target) as f64
    }

    /// Largest single-step cost.
    pub fn c_max(&self) -> f64 {
        let cells = self.free_cells();
        let far = cells
            .iter()
            .flat_map(|&a| cells.iter().map(move |&b| (a, b)))
            .map(|(a, b)| self.distance(a, b))
            .max()
            .unwrap_or(0);
        self.move_cost.max(self.terminal_weight * far as f64)
    }

    pub fn a_max(&self) -> f64 {
        self.c_max() / (1.0 - self.gamma)
    }

    pub fn observe(&self, target: usize, noise: usize) -> usize {
        self.shift(target, self.noise[noise])
    }

    pub fn action_index(label: &str) -> Result<usize> {
        ACTION_LABELS.iter().position(|&l| l == label).ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            context: "pursuit actions".into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PursuitState {
    pub agent: usize,
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: PursuitState,
    /// Observed target cell.
    pub observation: usize,
    pub cost: f64,
    pub done: bool,
}

/// One transition. Moves use `TARGET_MOVES` for both agent and target; stop
/// ends the episode at the terminal cost.
pub fn env_step(cfg: &PursuitConfig, state: PursuitState, action: usize, w: usize, n: usize) -> Result<Step> {
    if action > STOP {
        return Err(Error::UnknownLabel {
            label: action.to_string(),
            context: "pursuit actions".into(),
        });
    }
    if action == STOP {
        return Ok(Step {
            next: state,
            observation: cfg.observe(state.target, n),
            cost: cfg.stop_cost(state.agent, state.target),
            done: true,
        });
    }
    let next = PursuitState {
        agent: cfg.shift(state.agent, TARGET_MOVES[action]),
        target: cfg.shift(state.target, cfg.target_moves[w]),
    };
    Ok(Step {
        next,
        observation: cfg.observe(next.target, n),
        cost: cfg.move_cost,
        done: false,
    })
}

/// Target cells as a bit set.
pub type Targets = u64;

pub fn targets_iter(t: Targets) -> impl Iterator<Item = usize> {
    (0..64).filter(move |i| t & (1u64 << i) != 0)
}

/// Targets consistent with observing `y` among `candidates`.
pub fn filter_targets(cfg: &PursuitConfig, candidates: Targets, y: usize) -> Targets {
    let mut out = 0;
    for t in targets_iter(candidates) {
        if (0..cfg.noise.len()).any(|n| cfg.observe(t, n) == y) {
            out |= 1 << t;
        }
    }
    out
}

/// One-step reachable target cells.
pub fn predict_targets(cfg: &PursuitConfig, targets: Targets) -> Targets {
    let mut out = 0;
    for t in targets_iter(targets) {
        for &w in &cfg.target_moves {
            out |= 1 << cfg.shift(t, w);
        }
    }
    out
}

/// The agent's position with the set of consistent target cells, or the
/// terminal state after stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BeliefState {
    Done,
    Live { agent: usize, targets: Targets },
}

pub fn initial_belief(cfg: &PursuitConfig, agent: usize, y0: usize) -> BeliefState {
    let starts: Targets = cfg.target_start_cells().iter().fold(0, |m, &t| m | (1 << t));
    BeliefState::Live {
        agent,
        targets: filter_targets(cfg, starts, y0),
    }
}

pub fn update_belief(cfg: &PursuitConfig, belief: BeliefState, action: usize, y: usize) -> BeliefState {
    match belief {
        BeliefState::Done => BeliefState::Done,
        BeliefState::Live { .. } if action == STOP => BeliefState::Done,
        BeliefState::Live { agent, targets } => BeliefState::Live {
            agent: cfg.shift(agent, TARGET_MOVES[action]),
            targets: filter_targets(cfg, predict_targets(cfg, targets), y),
        },
    }
}

pub fn belief_label(cfg: &PursuitConfig, b: BeliefState) -> String {
    match b {
        BeliefState::Done => "done".into(),
        BeliefState::Live { agent, targets } => {
            let cells: Vec<String> = targets_iter(targets)
                .map(|t| {
                    let (x, y) = cfg.cell_at(t);
                    format!("{x}.{y}")
                })
                .collect();
            let (ax, ay) = cfg.cell_at(agent);
            format!("a{ax}.{ay};t{}", cells.join("/"))
        }
    }
}

pub fn cell_label(cfg: &PursuitConfig, c: usize) -> String {
    let (x, y) = cfg.cell_at(c);
    format!("{x}.{y}")
}
