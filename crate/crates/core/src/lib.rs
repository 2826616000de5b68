//! Worst-case (non-stochastic) control of partially observed systems:
//! memory-based dynamic programming, exact and approximate information
//! states, and a pursuit benchmark.

pub mod ais;
pub mod catalog;
pub mod error;
pub mod extreal;
pub mod general_dp;
pub mod info_state;
pub mod metric;
pub mod observable;
pub mod oracle;
pub mod pursuit;
pub mod report;
pub mod schema;
pub mod system;
pub mod uncertain;

pub use error::{Error, Result};
pub use extreal::ExtReal;
pub use metric::{LabeledMetricSpace, Metric};
pub use system::{Memory, MemoryNode, MemoryTree, StateSpaceSpec};
pub use uncertain::{CostDistribution, JointRange, Range};
