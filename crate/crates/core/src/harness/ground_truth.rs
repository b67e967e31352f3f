use std::collections::BTreeMap;

use crate::logical_process::{transition, Downstream, NodeState};
use crate::messages::NodeId;

use super::config::ScenarioConfig;

/// The actual network, stepped one real tick at a time with no optimism.
/// Both the engine's "measured" state and the sequential oracle use it.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    entry: NodeId,
    states: BTreeMap<NodeId, NodeState>,
    capacity: BTreeMap<NodeId, u64>,
    downstream: BTreeMap<NodeId, Downstream>,
    in_flight: BTreeMap<(u64, NodeId), u64>,
    tick: u64,
}

impl GroundTruth {
    pub fn new(config: &ScenarioConfig) -> Self {
        let topo = &config.topology;
        GroundTruth {
            entry: topo.entry_node,
            states: topo.nodes.iter().map(|&n| (n, NodeState::default())).collect(),
            capacity: topo.nodes.iter().map(|&n| (n, config.capacity_of(n))).collect(),
            downstream: topo
                .nodes
                .iter()
                .filter_map(|&n| topo.downstream(n).map(|d| (n, d)))
                .collect(),
            in_flight: BTreeMap::new(),
            tick: 0,
        }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn state(&self, node: NodeId) -> Option<NodeState> {
        self.states.get(&node).copied()
    }

    pub fn states(&self) -> &BTreeMap<NodeId, NodeState> {
        &self.states
    }

    /// Applies one tick: `entry_load` arrives at the entry node, forwarded
    /// traffic arrives wherever its link latency has elapsed.
    pub fn advance(&mut self, entry_load: u64) {
        self.tick += 1;
        let t = self.tick;
        for (&node, state) in self.states.iter_mut() {
            let mut load = self.in_flight.remove(&(t, node)).unwrap_or(0);
            if node == self.entry {
                load += entry_load;
            }
            let step = transition(state, 1, load, self.capacity[&node]);
            *state = step.state;
            if let Some(d) = self.downstream.get(&node) {
                *self.in_flight.entry((t + d.latency, d.dst)).or_insert(0) += step.served;
            }
        }
    }
}
