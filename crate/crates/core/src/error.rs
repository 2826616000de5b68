use thiserror::Error;

/// Errors raised by the solvers, verifiers and loaders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty range has no Hausdorff distance")]
    EmptyRange,
    #[error("mismatched spaces: {0}")]
    SpaceMismatch(String),
    #[error("invalid metric space: {0}")]
    InvalidMetric(String),
    #[error("conditioning on infeasible event")]
    InfeasibleConditioning,
    #[error("unknown label `{label}` in {context}")]
    UnknownLabel { label: String, context: String },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("memory inconsistent with system: {0}")]
    InfeasibleMemory(String),
    #[error("enumeration budget of {budget} exceeded (reached {reached})")]
    BudgetExceeded { budget: usize, reached: usize },
    #[error("information-state kind `{kind}` incompatible with system: {reason}")]
    IncompatibleKind { kind: String, reason: String },
    #[error("information-state condition violated (violation {violation}) at memory `{memory}`, action `{action}`: {detail}")]
    InfoStateViolation {
        violation: f64,
        memory: String,
        action: String,
        detail: String,
    },
    #[error("no feasible action at state `{0}`")]
    NoFeasibleAction(String),
    #[error("system does not observe its costs")]
    NotObservableCost,
    #[error("state-like update violated at memory `{memory}`, action `{action}`, observation `{observation}`: {detail}")]
    UpdateViolation {
        memory: String,
        action: String,
        observation: String,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable code used in error documents.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyRange => "empty_range",
            Error::SpaceMismatch(_) => "space_mismatch",
            Error::InvalidMetric(_) => "invalid_metric",
            Error::InfeasibleConditioning => "infeasible_conditioning",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::InvalidSystem(_) => "invalid_system",
            Error::InfeasibleMemory(_) => "infeasible_memory",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::IncompatibleKind { .. } => "incompatible_kind",
            Error::InfoStateViolation { .. } => "info_state_violation",
            Error::NoFeasibleAction(_) => "no_feasible_action",
            Error::NotObservableCost => "not_observable_cost",
            Error::UpdateViolation { .. } => "update_violation",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Parse(_) => "parse_error",
            Error::Io(_) => "io_error",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
