//! Streptichrons: virtual messages carrying predicted load.
//!
//! A streptichron is the unit of prediction exchanged between logical
//! processes. Each one has a negative twin (its anti-message) used to cancel
//! it after a rollback, and it can be re-aimed in flight toward locally
//! observed load (autoanaplasis).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timebase::VirtualTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Who minted a message id. The driving process is not a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Origin {
    Node(NodeId),
    Driver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MessageId {
    pub origin: Origin,
    pub seq: u64,
}

impl MessageId {
    pub const MIN: MessageId = MessageId {
        origin: Origin::Node(NodeId(0)),
        seq: 0,
    };
    pub const MAX: MessageId = MessageId {
        origin: Origin::Driver,
        seq: u64::MAX,
    };

    pub fn new(origin: Origin, seq: u64) -> Self {
        MessageId { origin, seq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn opposite(self) -> Sign {
        match self {
            Sign::Positive => Sign::Negative,
            Sign::Negative => Sign::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionPayload {
    /// Fixed load in packets/tick.
    ConstantLoad { value: f64 },
    /// `base + slope * (t - anchor)` packets/tick.
    LinearLoad {
        base: f64,
        slope: f64,
        anchor: VirtualTime,
    },
}

impl PredictionPayload {
    pub fn constant(value: f64) -> Self {
        PredictionPayload::ConstantLoad { value }
    }

    pub fn linear(base: f64, slope: f64, anchor: VirtualTime) -> Self {
        PredictionPayload::LinearLoad {
            base,
            slope,
            anchor,
        }
    }

    /// Predicted load at `t`, never negative.
    pub fn load_at(&self, t: VirtualTime) -> f64 {
        let raw = match *self {
            PredictionPayload::ConstantLoad { value } => value,
            PredictionPayload::LinearLoad {
                base,
                slope,
                anchor,
            } => base + slope * (t.ticks() as f64 - anchor.ticks() as f64),
        };
        if raw.is_nan() {
            0.0
        } else {
            raw.max(0.0)
        }
    }

    /// Load rounded to whole packets/tick, as consumed by the node model.
    pub fn packets_at(&self, t: VirtualTime) -> u64 {
        self.load_at(t).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub node: NodeId,
    pub local_load: f64,
    pub alpha: f64,
    pub before: PredictionPayload,
    pub after: PredictionPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Streptichron {
    pub id: MessageId,
    pub src: Origin,
    pub dst: NodeId,
    pub send_time: VirtualTime,
    pub receive_time: VirtualTime,
    pub sign: Sign,
    pub payload: PredictionPayload,
    pub adjustments: Vec<Adjustment>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MessageError {
    #[error("message {0:?} is already an anti-message")]
    AlreadyNegative(MessageId),
    #[error("anti-message {0:?} cannot be adjusted")]
    AdjustNegative(MessageId),
    #[error("receive time {receive} must be after send time {send}")]
    NonCausal { send: u64, receive: u64 },
    #[error("blend weight {0} outside [0, 1]")]
    BadAlpha(f64),
}

impl Streptichron {
    pub fn new(
        id: MessageId,
        src: Origin,
        dst: NodeId,
        send_time: VirtualTime,
        receive_time: VirtualTime,
        payload: PredictionPayload,
    ) -> Result<Self, MessageError> {
        if receive_time <= send_time {
            return Err(MessageError::NonCausal {
                send: send_time.ticks(),
                receive: receive_time.ticks(),
            });
        }
        Ok(Streptichron {
            id,
            src,
            dst,
            send_time,
            receive_time,
            sign: Sign::Positive,
            payload,
            adjustments: Vec::new(),
        })
    }

    pub fn is_anti(&self) -> bool {
        self.sign == Sign::Negative
    }

    /// Evaluated load at this message's own receive time.
    pub fn load(&self) -> f64 {
        self.payload.load_at(self.receive_time)
    }

    pub fn packets(&self) -> u64 {
        self.payload.packets_at(self.receive_time)
    }
}

pub fn make_antimessage(m: &Streptichron) -> Result<Streptichron, MessageError> {
    if m.is_anti() {
        return Err(MessageError::AlreadyNegative(m.id));
    }
    Ok(Streptichron {
        sign: Sign::Negative,
        adjustments: Vec::new(),
        ..m.clone()
    })
}

/// Blends the carried prediction toward the load observed at `at_node`.
///
/// The evaluated load at the receive time becomes
/// `alpha * local + (1 - alpha) * old`. Linear payloads keep their slope and
/// move their base so the line passes through the blended point.
pub fn autoanaplasis_adjust(
    m: &Streptichron,
    local_actual_load: f64,
    alpha: f64,
    at_node: NodeId,
) -> Result<Streptichron, MessageError> {
    if m.is_anti() {
        return Err(MessageError::AdjustNegative(m.id));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(MessageError::BadAlpha(alpha));
    }
    let before = m.payload;
    let after = blend_payload(&before, m.receive_time, local_actual_load, alpha);
    let mut out = m.clone();
    out.payload = after;
    out.adjustments.push(Adjustment {
        node: at_node,
        local_load: local_actual_load,
        alpha,
        before,
        after,
    });
    Ok(out)
}

pub(crate) fn blend_payload(
    p: &PredictionPayload,
    at: VirtualTime,
    local: f64,
    alpha: f64,
) -> PredictionPayload {
    let target = alpha * local + (1.0 - alpha) * p.load_at(at);
    match *p {
        PredictionPayload::ConstantLoad { .. } => PredictionPayload::ConstantLoad { value: target },
        PredictionPayload::LinearLoad { slope, anchor, .. } => PredictionPayload::LinearLoad {
            base: target - slope * (at.ticks() as f64 - anchor.ticks() as f64),
            slope,
            anchor,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealTrafficEvent {
    pub dst: NodeId,
    pub at: u64,
    pub load: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Annihilation {
    Annihilated,
    Enqueued,
}

type QueueKey = (VirtualTime, MessageId);

/// Receive-time ordered message collection (ties by id). Anti-messages whose
/// positive twin has not arrived yet wait here until it does.
#[derive(Debug, Clone, Default)]
pub struct MessageQueue {
    positives: BTreeMap<QueueKey, Streptichron>,
    antis: BTreeMap<QueueKey, Streptichron>,
}

impl MessageQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.antis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positive_count(&self) -> usize {
        self.positives.len()
    }

    pub fn anti_count(&self) -> usize {
        self.antis.len()
    }

    /// True when the opposite-signed twin of `m` is waiting here.
    pub fn holds_twin_of(&self, m: &Streptichron) -> bool {
        let key = (m.receive_time, m.id);
        match m.sign {
            Sign::Positive => self.antis.contains_key(&key),
            Sign::Negative => self.positives.contains_key(&key),
        }
    }

    pub fn annihilate(&mut self, incoming: Streptichron) -> Annihilation {
        let key = (incoming.receive_time, incoming.id);
        let (own, twins) = match incoming.sign {
            Sign::Positive => (&mut self.positives, &mut self.antis),
            Sign::Negative => (&mut self.antis, &mut self.positives),
        };
        if twins.remove(&key).is_some() {
            return Annihilation::Annihilated;
        }
        own.insert(key, incoming);
        Annihilation::Enqueued
    }

    /// Receive time of the earliest positive message.
    pub fn next_positive_time(&self) -> Option<VirtualTime> {
        self.positives.keys().next().map(|(t, _)| *t)
    }

    /// Removes every positive message received at exactly `t`, in id order.
    pub fn take_positives_at(&mut self, t: VirtualTime) -> Vec<Streptichron> {
        let keys: Vec<QueueKey> = self
            .positives
            .range((t, MessageId::MIN)..=(t, MessageId::MAX))
            .map(|(k, _)| *k)
            .collect();
        keys.iter().filter_map(|k| self.positives.remove(k)).collect()
    }

    /// Removes and returns positives received at or before `t`.
    pub fn drain_positives_through(&mut self, t: VirtualTime) -> Vec<Streptichron> {
        let keys: Vec<QueueKey> = self
            .positives
            .range(..=(t, MessageId::MAX))
            .map(|(k, _)| *k)
            .collect();
        keys.iter().filter_map(|k| self.positives.remove(k)).collect()
    }

    pub fn positives_mut(&mut self) -> impl Iterator<Item = &mut Streptichron> {
        self.positives.values_mut()
    }

    /// All queued messages in (receive_time, id) order, antis after
    /// positives on an exact key tie.
    pub fn iter(&self) -> impl Iterator<Item = &Streptichron> {
        let mut all: Vec<&Streptichron> = self.positives.values().chain(self.antis.values()).collect();
        all.sort_by_key(|m| (m.receive_time, m.id, m.sign));
        all.into_iter()
    }

    pub fn min_receive_time(&self) -> Option<VirtualTime> {
        let p = self.positives.keys().next().map(|k| k.0);
        let a = self.antis.keys().next().map(|k| k.0);
        match (p, a) {
            (Some(p), Some(a)) => Some(p.min(a)),
            (p, a) => p.or(a),
        }
    }
}

/// Free-function form of [`MessageQueue::annihilate`].
pub fn annihilate(queue: &mut MessageQueue, incoming: Streptichron) -> Annihilation {
    queue.annihilate(incoming)
}
