//! Small systems shipped with the crate.

use crate::error::Result;
use crate::schema::parse_system;
use crate::system::StateSpaceSpec;

const SOURCES: &[(&str, &str)] = &[
    ("action_cost", include_str!("../systems/action_cost.json")),
    ("adversarial_pair", include_str!("../systems/adversarial_pair.json")),
    ("constant_cost", include_str!("../systems/constant_cost.json")),
    ("hidden_fork", include_str!("../systems/hidden_fork.json")),
    ("noisy_three", include_str!("../systems/noisy_three.json")),
    ("perfect_chain", include_str!("../systems/perfect_chain.json")),
    ("two_behavior", include_str!("../systems/two_behavior.json")),
    ("two_step_chain", include_str!("../systems/two_step_chain.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Loads a shipped system by name. Panics on an unknown name.
pub fn load(name: &str) -> StateSpaceSpec {
    try_load(name).unwrap_or_else(|e| panic!("shipped system {name}: {e}"))
}

pub fn try_load(name: &str) -> Result<StateSpaceSpec> {
    let text = source(name).ok_or_else(|| crate::Error::UnknownLabel {
        label: name.to_string(),
        context: "shipped systems".to_string(),
    })?;
    parse_system(text)
}
