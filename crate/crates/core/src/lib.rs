//! Predictive network management on an optimistic simulation core.
//!
//! Every network node is mirrored by a logical process that runs its load
//! model ahead of real time on predicted traffic. Predictions travel as
//! streptichrons; when a node's measured state drifts from what was
//! predicted by more than the tolerance, the process rolls back, adopts the
//! measured state, and cancels what it sent in the meantime. Predicted
//! future state is available to management queries up to the lookahead.

pub mod cli;
pub mod driving_process;
pub mod harness;
pub mod logical_process;
pub mod messages;
pub mod metrics;
pub mod timebase;

pub use driving_process::{DrivingProcess, PredictorKind, PredictorSpec, TruthTrace};
pub use harness::{run, sequential_oracle, QueryAnswer, ScenarioConfig, SimEngine, Topology};
pub use logical_process::{LogicalProcess, NodeState, VerifyOutcome};
pub use messages::{NodeId, Streptichron};
pub use metrics::{summarize, MetricsReport, ReportFormat, SummaryStats};
pub use timebase::{RealClock, VirtualTime};
