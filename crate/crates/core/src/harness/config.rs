use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driving_process::{PredictorKind, PredictorSpec, TraceError, TruthTrace};
use crate::logical_process::Downstream;
use crate::messages::NodeId;

pub const DEFAULT_GVT_EVERY: u64 = 64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("truth trace: {0}")]
    Trace(#[from] TraceError),
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the filesystem rather than of the content.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            ConfigError::Io { .. } | ConfigError::Trace(TraceError::Io { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub src: NodeId,
    pub dst: NodeId,
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub nodes: Vec<NodeId>,
    pub links: Vec<Link>,
    pub entry_node: NodeId,
}

impl Topology {
    /// A chain `1 -> 2 -> ... -> n` entered at node 1.
    pub fn chain(n: u32, latency: u64) -> Self {
        Topology {
            nodes: (1..=n).map(NodeId).collect(),
            links: (1..n)
                .map(|i| Link {
                    src: NodeId(i),
                    dst: NodeId(i + 1),
                    latency,
                })
                .collect(),
            entry_node: NodeId(1),
        }
    }

    pub fn downstream(&self, node: NodeId) -> Option<Downstream> {
        self.links.iter().find(|l| l.src == node).map(|l| Downstream {
            dst: l.dst,
            latency: l.latency,
        })
    }

    /// Nodes without incoming links.
    pub fn sources(&self) -> Vec<NodeId> {
        let fed: BTreeSet<NodeId> = self.links.iter().map(|l| l.dst).collect();
        let mut out: Vec<NodeId> = self.nodes.iter().copied().filter(|n| !fed.contains(n)).collect();
        out.sort();
        out
    }

    pub fn max_path_latency(&self) -> u64 {
        self.nodes
            .iter()
            .map(|&n| {
                let mut total = 0u64;
                let mut cur = n;
                while let Some(d) = self.downstream(cur) {
                    total = total.saturating_add(d.latency);
                    cur = d.dst;
                }
                total
            })
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nodes.is_empty() {
            return Err(ConfigError::invalid("topology.nodes", "at least one node is required"));
        }
        let set: BTreeSet<NodeId> = self.nodes.iter().copied().collect();
        if set.len() != self.nodes.len() {
            return Err(ConfigError::invalid("topology.nodes", "duplicate node identifier"));
        }
        if !set.contains(&self.entry_node) {
            return Err(ConfigError::invalid(
                "topology.entry_node",
                format!("node {} is not in topology.nodes", self.entry_node),
            ));
        }
        let mut out_degree = BTreeMap::new();
        for (i, l) in self.links.iter().enumerate() {
            let field = format!("topology.links[{i}]");
            if !set.contains(&l.src) || !set.contains(&l.dst) {
                return Err(ConfigError::invalid(field, "endpoint not in topology.nodes"));
            }
            if l.src == l.dst {
                return Err(ConfigError::invalid(field, "self-loop"));
            }
            if l.latency == 0 {
                return Err(ConfigError::invalid(format!("{field}.latency"), "must be at least 1 tick"));
            }
            let d = out_degree.entry(l.src).or_insert(0);
            *d += 1;
            if *d > 1 {
                return Err(ConfigError::invalid(
                    field,
                    format!("node {} already has an outgoing link", l.src),
                ));
            }
        }
        for &start in &self.nodes {
            let mut cur = start;
            for _ in 0..self.nodes.len() {
                match self.downstream(cur) {
                    Some(d) if d.dst == start => {
                        return Err(ConfigError::invalid(
                            "topology.links",
                            format!("cycle through node {start}"),
                        ))
                    }
                    Some(d) => cur = d.dst,
                    None => break,
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSource {
    Inline(Vec<(u64, u64)>),
    File(PathBuf),
}

/// Service rate in packets per tick: one number for every node, or an
/// object keyed by node id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, try_from = "RawCapacity")]
pub enum Capacity {
    Uniform(u64),
    PerNode(BTreeMap<NodeId, u64>),
}

// JSON object keys are strings, which an untagged enum cannot turn back
// into node ids on its own.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawCapacity {
    Uniform(u64),
    PerNode(BTreeMap<String, u64>),
}

impl TryFrom<RawCapacity> for Capacity {
    type Error = String;

    fn try_from(raw: RawCapacity) -> Result<Self, Self::Error> {
        match raw {
            RawCapacity::Uniform(c) => Ok(Capacity::Uniform(c)),
            RawCapacity::PerNode(m) => m
                .into_iter()
                .map(|(k, v)| {
                    k.parse()
                        .map(|n| (NodeId(n), v))
                        .map_err(|_| format!("capacity key {k:?} is not a node id"))
                })
                .collect::<Result<_, _>>()
                .map(Capacity::PerNode),
        }
    }
}

fn default_gvt_every() -> u64 {
    DEFAULT_GVT_EVERY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: Topology,
    pub predictor: PredictorSpec,
    pub theta: u64,
    pub duration: u64,
    pub seed: u64,
    #[serde(default = "default_gvt_every")]
    pub gvt_every: u64,
    pub truth: TruthSource,
    pub capacity: Capacity,
    /// Directory that relative truth-file paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn new(
        topology: Topology,
        predictor: PredictorSpec,
        theta: u64,
        duration: u64,
        truth: Vec<(u64, u64)>,
        capacity: u64,
    ) -> Self {
        ScenarioConfig {
            topology,
            predictor,
            theta,
            duration,
            seed: 0,
            gvt_every: DEFAULT_GVT_EVERY,
            truth: TruthSource::Inline(truth),
            capacity: Capacity::Uniform(capacity),
            base_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn capacity_of(&self, node: NodeId) -> u64 {
        match &self.capacity {
            Capacity::Uniform(c) => *c,
            Capacity::PerNode(m) => m.get(&node).copied().unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.topology.validate()?;
        if self.duration == 0 {
            return Err(ConfigError::invalid("duration", "must be at least 1 tick"));
        }
        if self.gvt_every == 0 {
            return Err(ConfigError::invalid("gvt_every", "must be at least 1"));
        }
        for &n in &self.topology.nodes {
            if self.capacity_of(n) == 0 {
                return Err(ConfigError::invalid(
                    "capacity",
                    format!("node {n} needs a capacity of at least 1 packet/tick"),
                ));
            }
        }
        if let Capacity::PerNode(m) = &self.capacity {
            if let Some(extra) = m.keys().find(|n| !self.topology.nodes.contains(n)) {
                return Err(ConfigError::invalid("capacity", format!("unknown node {extra}")));
            }
        }
        let p = &self.predictor;
        if p.delta == 0 {
            return Err(ConfigError::invalid("predictor.delta", "must be at least 1 tick"));
        }
        if !(0.0..=1.0).contains(&p.alpha) {
            return Err(ConfigError::invalid("predictor.alpha", "must lie in [0, 1]"));
        }
        if let PredictorKind::LinearExtrapolation { window } = p.kind {
            if window < 2 {
                return Err(ConfigError::invalid(
                    "predictor.kind.linear_extrapolation.window",
                    "must be at least 2",
                ));
            }
        }
        let horizon = self
            .duration
            .checked_add(p.delta)
            .and_then(|h| h.checked_add(self.topology.max_path_latency()))
            .filter(|h| *h < u64::MAX / 2);
        if horizon.is_none() {
            return Err(ConfigError::invalid(
                "duration",
                "duration + delta + path latency overflows the time axis",
            ));
        }
        Ok(())
    }

    /// Loads and checks the ground-truth trace.
    pub fn truth_trace(&self) -> Result<TruthTrace, ConfigError> {
        let trace = match &self.truth {
            TruthSource::Inline(pairs) => {
                for w in pairs.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(ConfigError::invalid(
                            "truth.inline",
                            format!("tick {} is not after tick {}", w[1].0, w[0].0),
                        ));
                    }
                }
                TruthTrace::from_pairs(pairs.iter().copied())
            }
            TruthSource::File(p) => {
                let path = match &self.base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                TruthTrace::read(&path)?
            }
        };
        if let Some((t, _)) = trace.iter().find(|(t, _)| *t == 0 || *t > self.duration) {
            return Err(ConfigError::invalid(
                "truth",
                format!("tick {t} outside the run (1..={})", self.duration),
            ));
        }
        Ok(trace)
    }
}
