use std::collections::BTreeMap;

use crate::logical_process::NodeState;
use crate::messages::NodeId;

use super::config::{ConfigError, ScenarioConfig};
use super::ground_truth::GroundTruth;

pub type Trajectory = BTreeMap<(NodeId, u64), NodeState>;

/// Full state trajectory with every tick applied in order and nothing
/// speculative. Tick 0 holds the initial (empty) states.
pub fn sequential_oracle(config: &ScenarioConfig) -> Result<Trajectory, ConfigError> {
    config.validate()?;
    let truth = config.truth_trace()?;
    let mut net = GroundTruth::new(config);
    let mut out = Trajectory::new();
    let record = |net: &GroundTruth, out: &mut Trajectory| {
        for (&n, &s) in net.states() {
            out.insert((n, net.tick()), s);
        }
    };
    record(&net, &mut out);
    for t in 1..=config.duration {
        net.advance(truth.load_at(t));
        record(&net, &mut out);
    }
    Ok(out)
}
