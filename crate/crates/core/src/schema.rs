//! JSON system files (schema version 1).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{LabeledMetricSpace, Metric};
use crate::system::{Spaces, StateSpaceSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceDoc {
    Labels(Vec<String>),
    Full(FullSpaceDoc),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullSpaceDoc {
    pub labels: Vec<String>,
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default)]
    pub coords: Option<Vec<Vec<i64>>>,
    #[serde(default)]
    pub distances: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDoc {
    pub schema: u32,
    pub name: String,
    pub gamma: f64,
    #[serde(default)]
    pub observable_cost: bool,
    pub states: SpaceDoc,
    pub actions: SpaceDoc,
    pub disturbances: SpaceDoc,
    pub noises: SpaceDoc,
    pub observations: SpaceDoc,
    pub initial_states: Vec<String>,
    /// `[state, action, disturbance, next_state]`
    pub transitions: Vec<(String, String, String, String)>,
    /// `[state, noise, observation]`
    pub observation_map: Vec<(String, String, String)>,
    /// `[state, action, cost]`
    pub costs: Vec<(String, String, f64)>,
}

impl SpaceDoc {
    pub fn build(&self, what: &str) -> Result<LabeledMetricSpace> {
        match self {
            SpaceDoc::Labels(labels) => LabeledMetricSpace::discrete(labels.clone()),
            SpaceDoc::Full(doc) => {
                let labels = doc.labels.clone();
                match (doc.metric, &doc.coords, &doc.distances) {
                    (Some(Metric::Table) | None, None, Some(table)) => {
                        LabeledMetricSpace::from_table(labels, table.clone())
                    }
                    (Some(m @ (Metric::L1 | Metric::L2 | Metric::Discrete)), Some(coords), None) => {
                        LabeledMetricSpace::from_coords(labels, coords.clone(), m)
                    }
                    (None, Some(coords), None) => {
                        LabeledMetricSpace::from_coords(labels, coords.clone(), Metric::L1)
                    }
                    (Some(Metric::Discrete) | None, None, None) => LabeledMetricSpace::discrete(labels),
                    _ => Err(Error::InvalidMetric(format!(
                        "{what}: inconsistent metric/coords/distances combination"
                    ))),
                }
            }
        }
    }
}

fn lookup(space: &LabeledMetricSpace, label: &str, context: &str) -> Result<usize> {
    space.index_of(label).ok_or_else(|| Error::UnknownLabel {
        label: label.to_string(),
        context: context.to_string(),
    })
}

impl SystemDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: SystemDoc = serde_json::from_str(text)?;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                doc.schema
            )));
        }
        Ok(doc)
    }

    pub fn build(&self) -> Result<StateSpaceSpec> {
        let spaces = Spaces {
            states: self.states.build("states")?,
            actions: self.actions.build("actions")?,
            disturbances: self.disturbances.build("disturbances")?,
            noises: self.noises.build("noises")?,
            observations: self.observations.build("observations")?,
        };
        let initial = self
            .initial_states
            .iter()
            .map(|l| lookup(&spaces.states, l, "initial_states"))
            .collect::<Result<Vec<_>>>()?;

        let mut trans = BTreeMap::new();
        for (x, u, w, xn) in &self.transitions {
            let key = (
                lookup(&spaces.states, x, "transitions")?,
                lookup(&spaces.actions, u, "transitions")?,
                lookup(&spaces.disturbances, w, "transitions")?,
            );
            let next = lookup(&spaces.states, xn, "transitions")?;
            if trans.insert(key, next).is_some() {
                return Err(Error::InvalidSystem(format!("duplicate transition entry ({x},{u},{w})")));
            }
        }
        let mut obs = BTreeMap::new();
        for (x, n, y) in &self.observation_map {
            let key = (
                lookup(&spaces.states, x, "observation_map")?,
                lookup(&spaces.noises, n, "observation_map")?,
            );
            if obs.insert(key, lookup(&spaces.observations, y, "observation_map")?).is_some() {
                return Err(Error::InvalidSystem(format!("duplicate observation entry ({x},{n})")));
            }
        }
        let mut costs = BTreeMap::new();
        for (x, u, c) in &self.costs {
            let key = (lookup(&spaces.states, x, "costs")?, lookup(&spaces.actions, u, "costs")?);
            if costs.insert(key, *c).is_some() {
                return Err(Error::InvalidSystem(format!("duplicate cost entry ({x},{u})")));
            }
        }
        let (nx, nu, nw, nn) = (
            spaces.states.len(),
            spaces.actions.len(),
            spaces.disturbances.len(),
            spaces.noises.len(),
        );
        if trans.len() != nx * nu * nw {
            return Err(Error::InvalidSystem(format!(
                "transition table has {} of {} entries",
                trans.len(),
                nx * nu * nw
            )));
        }
        if obs.len() != nx * nn {
            return Err(Error::InvalidSystem(format!(
                "observation table has {} of {} entries",
                obs.len(),
                nx * nn
            )));
        }
        if costs.len() != nx * nu {
            return Err(Error::InvalidSystem(format!(
                "cost table has {} of {} entries",
                costs.len(),
                nx * nu
            )));
        }
        StateSpaceSpec::from_fns(
            self.name.clone(),
            spaces,
            initial,
            |x, u, w| trans[&(x, u, w)],
            |x, n| obs[&(x, n)],
            |x, u| costs[&(x, u)],
            self.gamma,
            self.observable_cost,
        )
    }
}

pub fn parse_system(text: &str) -> Result<StateSpaceSpec> {
    SystemDoc::parse(text)?.build()
}

pub fn load_system(path: &Path) -> Result<StateSpaceSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_system(&text)
}
