//! The simulated active network: topology, scheduler, ground truth and the
//! predicted-state query.

mod config;
mod engine;
mod ground_truth;
mod oracle;

pub use config::{Capacity, ConfigError, Link, ScenarioConfig, Topology, TruthSource, DEFAULT_GVT_EVERY};
pub use engine::{run, Branch, EngineError, QueryAnswer, SimEngine, StepSummary, ToleranceEvent};
pub use ground_truth::GroundTruth;
pub use oracle::{sequential_oracle, Trajectory};
