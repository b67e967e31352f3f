//! The prediction source feeding future load into the network.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::{MessageError, MessageId, NodeId, Origin, PredictionPayload, Streptichron};
use crate::timebase::{RealClock, TimeError, VirtualTime};

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorKind {
    Perfect,
    ConstantRate {
        rate: u64,
    },
    LinearExtrapolation {
        window: usize,
    },
    /// Truth plus seeded integer noise in `[-amplitude, amplitude]`.
    /// Without an explicit seed the scenario seed is used.
    NoisyTrace {
        amplitude: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub delta: u64,
}

impl PredictorSpec {
    pub fn new(kind: PredictorKind, delta: u64) -> Self {
        PredictorSpec {
            kind,
            alpha: DEFAULT_ALPHA,
            delta,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: expected `tick,load`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: tick {tick} is not after the previous tick")]
    NotAscending { line: usize, tick: u64 },
    #[error("reading trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ground-truth entry load per real tick. Ticks absent from the trace carry
/// no traffic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TruthTrace(BTreeMap<u64, u64>);

impl TruthTrace {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, u64)>) -> Self {
        TruthTrace(pairs.into_iter().collect())
    }

    /// Parses `tick,load` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut map = BTreeMap::new();
        let mut last: Option<u64> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = || TraceError::Malformed {
                line: i + 1,
                text: raw.to_string(),
            };
            let (tick, load) = line.split_once(',').ok_or_else(malformed)?;
            let tick: u64 = tick.trim().parse().map_err(|_| malformed())?;
            let load: u64 = load.trim().parse().map_err(|_| malformed())?;
            if last.is_some_and(|l| tick <= l) {
                return Err(TraceError::NotAscending { line: i + 1, tick });
            }
            last = Some(tick);
            map.insert(tick, load);
        }
        Ok(TruthTrace(map))
    }

    pub fn read(path: &Path) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn load_at(&self, tick: u64) -> u64 {
        self.0.get(&tick).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.0.iter().map(|(t, l)| (*t, *l))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Seeded noise for one tick. A pure function of `(seed, tick)`, so the
/// stream does not depend on how prediction windows are batched.
pub fn noise_at(seed: u64, tick: u64, amplitude: u64) -> i64 {
    if amplitude == 0 {
        return 0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tick);
    let amp = amplitude as i64;
    rng.random_range(-amp..=amp)
}

/// Least-squares line through `points`, returned as `(intercept, slope)`.
fn fit_line(points: &[(u64, u64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x as f64 - mx;
        sxy += dx * (y as f64 - my);
        sxx += dx * dx;
    }
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (my - slope * mx, slope)
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Message(#[from] MessageError),
}

/// Emits one streptichron per tick into the entry node, keeping the
/// prediction frontier at `real_now + delta`. Source nodes other than the
/// entry receive zero-load heartbeats over the same window so every logical
/// process holds a prediction for every tick.
#[derive(Debug, Clone)]
pub struct DrivingProcess {
    spec: PredictorSpec,
    entry: NodeId,
    idle_sources: Vec<NodeId>,
    truth: TruthTrace,
    noise_seed: u64,
    last_predicted: u64,
    next_seq: u64,
}

impl DrivingProcess {
    pub fn new(spec: PredictorSpec, entry: NodeId, truth: TruthTrace, scenario_seed: u64) -> Self {
        let noise_seed = match spec.kind {
            PredictorKind::NoisyTrace { seed: Some(s), .. } => s,
            _ => scenario_seed,
        };
        DrivingProcess {
            spec,
            entry,
            idle_sources: Vec::new(),
            truth,
            noise_seed,
            last_predicted: 0,
            next_seq: 0,
        }
    }

    pub fn with_idle_sources(mut self, nodes: Vec<NodeId>) -> Self {
        self.idle_sources = nodes;
        self
    }

    pub fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }

    pub fn last_predicted(&self) -> u64 {
        self.last_predicted
    }

    /// Payload the predictor would emit at `real_now` for tick `t`.
    pub fn payload_for(&self, history: &[(u64, u64)], real_now: u64, t: u64) -> PredictionPayload {
        match self.spec.kind {
            PredictorKind::Perfect => PredictionPayload::constant(self.truth.load_at(t) as f64),
            PredictorKind::ConstantRate { rate } => PredictionPayload::constant(rate as f64),
            PredictorKind::LinearExtrapolation { window } => {
                if history.len() < window {
                    let last = history.last().map_or(0, |p| p.1);
                    return PredictionPayload::constant(last as f64);
                }
                let (intercept, slope) = fit_line(&history[history.len() - window..]);
                let base = intercept + slope * real_now as f64;
                PredictionPayload::linear(base, slope, VirtualTime::new(real_now))
            }
            PredictorKind::NoisyTrace { amplitude, .. } => {
                let noisy = self.truth.load_at(t) as i64 + noise_at(self.noise_seed, t, amplitude);
                PredictionPayload::constant(noisy.max(0) as f64)
            }
        }
    }

    /// Predictions for every tick in `(last_predicted, real_now + delta]`.
    /// `history` is the observed `(tick, load)` series at the entry node.
    pub fn predict(
        &mut self,
        history: &[(u64, u64)],
        real_now: RealClock,
    ) -> Result<Vec<Streptichron>, PredictError> {
        self.emit(history, real_now, false)
    }

    /// Like [`predict`](Self::predict), plus heartbeats for idle sources.
    pub fn fill_window(
        &mut self,
        history: &[(u64, u64)],
        real_now: RealClock,
    ) -> Result<Vec<Streptichron>, PredictError> {
        self.emit(history, real_now, true)
    }

    fn emit(
        &mut self,
        history: &[(u64, u64)],
        real_now: RealClock,
        heartbeats: bool,
    ) -> Result<Vec<Streptichron>, PredictError> {
        let now = real_now.as_virtual();
        let frontier = now.checked_add(self.spec.delta)?.ticks();
        let first = self.last_predicted.max(real_now.now()) + 1;
        let mut out = Vec::new();
        for t in first..=frontier {
            let payload = self.payload_for(history, real_now.now(), t);
            out.push(self.message(self.entry, now, t, payload)?);
            if heartbeats {
                for i in 0..self.idle_sources.len() {
                    let dst = self.idle_sources[i];
                    out.push(self.message(dst, now, t, PredictionPayload::constant(0.0))?);
                }
            }
        }
        self.last_predicted = self.last_predicted.max(frontier);
        Ok(out)
    }

    fn message(
        &mut self,
        dst: NodeId,
        now: VirtualTime,
        t: u64,
        payload: PredictionPayload,
    ) -> Result<Streptichron, MessageError> {
        let id = MessageId::new(Origin::Driver, self.next_seq);
        self.next_seq += 1;
        Streptichron::new(id, Origin::Driver, dst, now, VirtualTime::new(t), payload)
    }
}
