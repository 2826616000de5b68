use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{fmt12, Csv};

use super::env::*;

const NUM_ACTIONS: usize = ACTION_LABELS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// Asymmetric TD step, weighting cost increases by `1 + kappa`.
    RiskWeighted,
    /// `Q <- max(Q, target)`: remembers the worst sampled outcome.
    MaxBackup,
}

/// What the agent conditions on besides its own cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentStateKind {
    /// Set of target cells consistent with the history.
    Belief,
    /// Last observed target cell only.
    Observation,
}

/// Agent-side state. `info` is a target bit set or an observed cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentState {
    Done,
    Live { agent: usize, info: u64 },
}

impl AgentStateKind {
    pub fn initial(self, cfg: &PursuitConfig, agent: usize, y0: usize) -> AgentState {
        match self {
            AgentStateKind::Belief => from_belief(initial_belief(cfg, agent, y0)),
            AgentStateKind::Observation => AgentState::Live { agent, info: y0 as u64 },
        }
    }

    pub fn update(self, cfg: &PursuitConfig, z: AgentState, u: usize, y: usize) -> AgentState {
        match z {
            AgentState::Done => AgentState::Done,
            AgentState::Live { .. } if u == STOP => AgentState::Done,
            AgentState::Live { agent, info } => match self {
                AgentStateKind::Belief => {
                    from_belief(update_belief(cfg, BeliefState::Live { agent, targets: info }, u, y))
                }
                AgentStateKind::Observation => AgentState::Live {
                    agent: cfg.shift(agent, TARGET_MOVES[u]),
                    info: y as u64,
                },
            },
        }
    }

    pub fn label(self, cfg: &PursuitConfig, z: AgentState) -> String {
        match (self, z) {
            (_, AgentState::Done) => "done".into(),
            (AgentStateKind::Belief, AgentState::Live { agent, info }) => {
                belief_label(cfg, BeliefState::Live { agent, targets: info })
            }
            (AgentStateKind::Observation, AgentState::Live { agent, info }) => {
                format!("a{};y{}", cell_label(cfg, agent), cell_label(cfg, info as usize))
            }
        }
    }
}

pub fn from_belief(b: BeliefState) -> AgentState {
    match b {
        BeliefState::Done => AgentState::Done,
        BeliefState::Live { agent, targets } => AgentState::Live { agent, info: targets },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QLearnConfig {
    pub kappa: f64,
    pub alpha: f64,
    pub episodes: usize,
    pub explore: f64,
    pub rule: UpdateRule,
    pub agent_state: AgentStateKind,
    pub seed: u64,
    /// Steps before an episode is cut; the last update still bootstraps.
    pub episode_cap: usize,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        QLearnConfig {
            kappa: 0.9,
            alpha: 0.1,
            episodes: 20_000,
            explore: 0.3,
            rule: UpdateRule::MaxBackup,
            agent_state: AgentStateKind::Belief,
            seed: 0,
            episode_cap: 50,
        }
    }
}

impl QLearnConfig {
    /// The risk-neutral observation-only baseline.
    pub fn baseline(seed: u64) -> Self {
        QLearnConfig {
            kappa: 0.0,
            rule: UpdateRule::RiskWeighted,
            agent_state: AgentStateKind::Observation,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::InvalidConfig(format!("kappa {} outside [0, 1)", self.kappa)));
        }
        if !(self.alpha > 0.0 && self.alpha * (1.0 + self.kappa) <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} must be positive with alpha*(1+kappa) <= 1",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.explore) {
            return Err(Error::InvalidConfig(format!("explore {} outside [0, 1]", self.explore)));
        }
        if self.episode_cap == 0 {
            return Err(Error::InvalidConfig("episode_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let rule = match self.rule {
            UpdateRule::RiskWeighted => "risk-weighted",
            UpdateRule::MaxBackup => "max-backup",
        };
        let state = match self.agent_state {
            AgentStateKind::Belief => "belief",
            AgentStateKind::Observation => "observation",
        };
        format!("{rule}/{state}/kappa={}/seed={}", fmt12(self.kappa), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub episode: usize,
    pub steps: usize,
    #[serde(with = "crate::report::float12")]
    pub mean_abs_td: f64,
    #[serde(with = "crate::report::float12")]
    pub max_abs_td: f64,
    pub changed: usize,
}

#[derive(Debug, Clone)]
pub struct QTable {
    pub kind: AgentStateKind,
    pub q: HashMap<AgentState, [f64; NUM_ACTIONS]>,
    pub log: Vec<LogRow>,
    /// Last episode in which some entry changed.
    pub last_change: Option<usize>,
}

impl QTable {
    pub fn values(&self, z: &AgentState) -> [f64; NUM_ACTIONS] {
        match z {
            AgentState::Done => [0.0; NUM_ACTIONS],
            _ => self.q.get(z).copied().unwrap_or([0.0; NUM_ACTIONS]),
        }
    }

    /// Smallest-index minimizer.
    pub fn greedy(&self, z: &AgentState) -> usize {
        argmin(&self.values(z))
    }

    pub fn min_value(&self, z: &AgentState) -> f64 {
        let v = self.values(z);
        v[argmin(&v)]
    }

    pub fn to_csv(&self, cfg: &PursuitConfig) -> String {
        let mut header = vec!["state"];
        header.extend(ACTION_LABELS);
        let mut csv = Csv::new(&header);
        let mut keys: Vec<&AgentState> = self.q.keys().collect();
        keys.sort();
        for z in keys {
            let mut row = vec![self.kind.label(cfg, *z)];
            row.extend(self.q[z].iter().map(|&v| fmt12(v)));
            csv.row(row);
        }
        csv.finish()
    }

    pub fn log_csv(&self) -> String {
        let mut csv = Csv::new(&["episode", "steps", "mean_abs_td", "max_abs_td", "changed"]);
        for r in &self.log {
            csv.row([
                r.episode.to_string(),
                r.steps.to_string(),
                fmt12(r.mean_abs_td),
                fmt12(r.max_abs_td),
                r.changed.to_string(),
            ]);
        }
        csv.finish()
    }
}

pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Tabular Q-learning on sampled episodes. Starts, disturbances and noise
/// are drawn uniformly; the log has one row per block of episodes.
pub fn risk_averse_q_learning(cfg: &PursuitConfig, qcfg: &QLearnConfig) -> Result<QTable> {
    cfg.validate()?;
    qcfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(qcfg.seed);
    let agents = cfg.agent_start_cells();
    let targets = cfg.target_start_cells();
    let kind = qcfg.agent_state;
    let mut table = QTable {
        kind,
        q: HashMap::new(),
        log: Vec::new(),
        last_change: None,
    };
    let block = (qcfg.episodes / 100).max(1);
    let (mut steps, mut sum_td, mut max_td, mut changed) = (0usize, 0.0f64, 0.0f64, 0usize);

    for ep in 0..qcfg.episodes {
        let agent = agents[rng.gen_range(0..agents.len())];
        let target = targets[rng.gen_range(0..targets.len())];
        let y0 = cfg.observe(target, rng.gen_range(0..cfg.noise.len()));
        let mut state = PursuitState { agent, target };
        let mut z = kind.initial(cfg, agent, y0);
        let mut ep_changed = false;
        for _ in 0..qcfg.episode_cap {
            let u = if rng.gen::<f64>() < qcfg.explore {
                rng.gen_range(0..NUM_ACTIONS)
            } else {
                table.greedy(&z)
            };
            let w = rng.gen_range(0..cfg.target_moves.len());
            let n = rng.gen_range(0..cfg.noise.len());
            let step = env_step(cfg, state, u, w, n)?;
            let z_next = kind.update(cfg, z, u, step.observation);
            let target_value = step.cost + cfg.gamma * table.min_value(&z_next);
            let entry = table.q.entry(z).or_insert([0.0; NUM_ACTIONS]);
            let old = entry[u];
            let td = target_value - old;
            entry[u] = match qcfg.rule {
                UpdateRule::MaxBackup => old.max(target_value),
                UpdateRule::RiskWeighted if td > 0.0 => old + qcfg.alpha * (1.0 + qcfg.kappa) * td,
                UpdateRule::RiskWeighted => old + qcfg.alpha * (1.0 - qcfg.kappa) * td,
            };
            if entry[u] != old {
                ep_changed = true;
                changed += 1;
            }
            steps += 1;
            sum_td += td.abs();
            max_td = max_td.max(td.abs());
            if step.done {
                break;
            }
            state = step.next;
            z = z_next;
        }
        if ep_changed {
            table.last_change = Some(ep);
        }
        if (ep + 1) % block == 0 || ep + 1 == qcfg.episodes {
            table.log.push(LogRow {
                episode: ep + 1,
                steps,
                mean_abs_td: if steps > 0 { sum_td / steps as f64 } else { 0.0 },
                max_abs_td: max_td,
                changed,
            });
            (steps, sum_td, max_td, changed) = (0, 0.0, 0.0, 0);
        }
    }
    Ok(table)
}
