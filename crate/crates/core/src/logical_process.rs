//! The per-node protocol kernel.
//!
//! A [`LogicalProcess`] executes predicted events ahead of real time, saves a
//! state record after every event, and rolls back when either a straggler
//! arrives or verification against the measured state exceeds the tolerance.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::{
    autoanaplasis_adjust, make_antimessage, Annihilation, MessageError, MessageId, MessageQueue,
    NodeId, Origin, PredictionPayload, Streptichron,
};
use crate::timebase::{RealClock, TimeError, VirtualTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct NodeState {
    pub queue_len: u64,
    pub processed: u64,
    pub inst_load: u64,
}

/// Result of applying the node model over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub state: NodeState,
    pub arrivals: u64,
    pub served: u64,
}

/// Fluid queue update over `elapsed` ticks at arrival rate `load` with
/// service rate `capacity`.
pub fn transition(prev: &NodeState, elapsed: u64, load: u64, capacity: u64) -> Transition {
    let arrivals = load * elapsed;
    let backlog = prev.queue_len + arrivals;
    let served = backlog.min(capacity * elapsed);
    Transition {
        state: NodeState {
            queue_len: backlog - served,
            processed: prev.processed + served,
            inst_load: load,
        },
        arrivals,
        served,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRecord {
    pub at: VirtualTime,
    pub state: NodeState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Downstream {
    pub dst: NodeId,
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("rollback target {to} is not before lvt {lvt}")]
    RollbackNotInPast { to: VirtualTime, lvt: VirtualTime },
    #[error("no saved state at or before {to}; fossil collection passed the rollback floor")]
    FossilFloor { to: VirtualTime },
    #[error("node {node} has no cached prediction for tick {at}")]
    MissingPrediction { node: NodeId, at: u64 },
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Message(#[from] MessageError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollbackReport {
    pub restored_to: VirtualTime,
    pub antimessages: Vec<Streptichron>,
    pub states_discarded: usize,
    pub reinserted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeliveryEffect {
    Enqueued,
    Annihilated,
    /// The message was timestamped at or before lvt. `at` is its receive
    /// time; every event at or after `at` was undone before insertion.
    RollbackTriggered {
        at: VirtualTime,
        report: RollbackReport,
        then: Annihilation,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepResult {
    Processed {
        lvt: VirtualTime,
        consumed: usize,
        state: NodeState,
        emitted: Option<Streptichron>,
    },
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyOutcome {
    WithinTolerance { error: u64 },
    RolledBack { error: u64, restored_to: VirtualTime },
}

impl VerifyOutcome {
    pub fn error(&self) -> u64 {
        match *self {
            VerifyOutcome::WithinTolerance { error } | VerifyOutcome::RolledBack { error, .. } => {
                error
            }
        }
    }

    pub fn rolled_back(&self) -> bool {
        matches!(self, VerifyOutcome::RolledBack { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub outcome: VerifyOutcome,
    pub predicted: NodeState,
    pub antimessages: Vec<Streptichron>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FossilCounts {
    pub states: usize,
    pub outputs: usize,
    pub cache: usize,
    pub inputs: usize,
}

impl std::ops::AddAssign for FossilCounts {
    fn add_assign(&mut self, o: Self) {
        self.states += o.states;
        self.outputs += o.outputs;
        self.cache += o.cache;
        self.inputs += o.inputs;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotAvailable {
    BeyondLvt,
    Fossilized,
    NoEvent,
}

#[derive(Debug, Clone)]
pub struct LogicalProcess {
    node: NodeId,
    lvt: VirtualTime,
    input_queue: MessageQueue,
    output_log: Vec<Streptichron>,
    consumed: Vec<(VirtualTime, Vec<Streptichron>)>,
    state_queue: VecDeque<StateRecord>,
    prediction_cache: BTreeMap<VirtualTime, NodeState>,
    theta: u64,
    capacity: u64,
    downstream: Option<Downstream>,
    next_seq: u64,
    gvt_seen: VirtualTime,
}

impl LogicalProcess {
    pub fn new(node: NodeId, capacity: u64, theta: u64, downstream: Option<Downstream>) -> Self {
        Self::with_state(node, capacity, theta, downstream, NodeState::default())
    }

    pub fn with_state(
        node: NodeId,
        capacity: u64,
        theta: u64,
        downstream: Option<Downstream>,
        initial: NodeState,
    ) -> Self {
        let mut prediction_cache = BTreeMap::new();
        prediction_cache.insert(VirtualTime::ZERO, initial);
        LogicalProcess {
            node,
            lvt: VirtualTime::ZERO,
            input_queue: MessageQueue::new(),
            output_log: Vec::new(),
            consumed: Vec::new(),
            state_queue: VecDeque::from([StateRecord {
                at: VirtualTime::ZERO,
                state: initial,
            }]),
            prediction_cache,
            theta,
            capacity,
            downstream,
            next_seq: 0,
            gvt_seen: VirtualTime::ZERO,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn lvt(&self) -> VirtualTime {
        self.lvt
    }

    pub fn theta(&self) -> u64 {
        self.theta
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn downstream(&self) -> Option<Downstream> {
        self.downstream
    }

    pub fn input_queue(&self) -> &MessageQueue {
        &self.input_queue
    }

    pub fn output_log(&self) -> &[Streptichron] {
        &self.output_log
    }

    pub fn state_records(&self) -> impl Iterator<Item = &StateRecord> {
        self.state_queue.iter()
    }

    pub fn prediction_cache(&self) -> &BTreeMap<VirtualTime, NodeState> {
        &self.prediction_cache
    }

    pub fn current_state(&self) -> NodeState {
        self.state_queue.back().expect("state queue never empty").state
    }

    pub fn gvt_seen(&self) -> VirtualTime {
        self.gvt_seen
    }

    /// Receive time of the next event this LP would process.
    pub fn next_event_time(&self) -> Option<VirtualTime> {
        self.input_queue.next_positive_time()
    }

    pub fn query(&self, t: VirtualTime) -> Result<NodeState, NotAvailable> {
        if t > self.lvt {
            return Err(NotAvailable::BeyondLvt);
        }
        match self.prediction_cache.get(&t) {
            Some(s) => Ok(*s),
            None if t < self.gvt_seen => Err(NotAvailable::Fossilized),
            None => Err(NotAvailable::NoEvent),
        }
    }

    pub fn deliver(&mut self, m: Streptichron) -> Result<DeliveryEffect, ProtocolError> {
        // twin still unprocessed: nothing to undo
        if self.input_queue.holds_twin_of(&m) {
            self.input_queue.annihilate(m);
            return Ok(DeliveryEffect::Annihilated);
        }
        if m.receive_time <= self.lvt {
            let at = m.receive_time;
            let report = self.rollback(at.prev())?;
            let then = self.input_queue.annihilate(m);
            return Ok(DeliveryEffect::RollbackTriggered { at, report, then });
        }
        Ok(match self.input_queue.annihilate(m) {
            Annihilation::Annihilated => DeliveryEffect::Annihilated,
            Annihilation::Enqueued => DeliveryEffect::Enqueued,
        })
    }

    /// Processes every positive message at the earliest pending receive
    /// time, provided it does not exceed `horizon`.
    pub fn process_next(&mut self, horizon: VirtualTime) -> Result<StepResult, ProtocolError> {
        let t = match self.input_queue.next_positive_time() {
            Some(t) if t <= horizon => t,
            _ => return Ok(StepResult::Blocked),
        };
        debug_assert!(t > self.lvt, "queued event at {t} not after lvt {}", self.lvt);
        let batch = self.input_queue.take_positives_at(t);
        let load: u64 = batch.iter().map(Streptichron::packets).sum();
        let elapsed = t.since(self.lvt);
        let step = transition(&self.current_state(), elapsed, load, self.capacity);

        self.lvt = t;
        self.state_queue.push_back(StateRecord {
            at: t,
            state: step.state,
        });
        self.prediction_cache.insert(t, step.state);
        let consumed = batch.len();
        self.consumed.push((t, batch));

        let emitted = match self.downstream {
            Some(link) => {
                let id = MessageId::new(Origin::Node(self.node), self.next_seq);
                self.next_seq += 1;
                let m = Streptichron::new(
                    id,
                    Origin::Node(self.node),
                    link.dst,
                    t,
                    t.checked_add(link.latency)?,
                    PredictionPayload::constant((step.served / elapsed) as f64),
                )?;
                self.output_log.push(m.clone());
                Some(m)
            }
            None => None,
        };
        Ok(StepResult::Processed {
            lvt: t,
            consumed,
            state: step.state,
            emitted,
        })
    }

    /// Restores the latest saved state at or before `to`, undoing every
    /// event after it.
    pub fn rollback(&mut self, to: VirtualTime) -> Result<RollbackReport, ProtocolError> {
        if to >= self.lvt {
            return Err(ProtocolError::RollbackNotInPast { to, lvt: self.lvt });
        }
        let keep = self.state_queue.iter().rposition(|r| r.at <= to);
        let Some(idx) = keep else {
            return Err(ProtocolError::FossilFloor { to });
        };
        let states_discarded = self.state_queue.len() - idx - 1;
        self.state_queue.truncate(idx + 1);
        let restored = self.state_queue[idx].at;
        self.lvt = restored;

        let cut = self.output_log.partition_point(|m| m.send_time <= restored);
        let antimessages = self
            .output_log
            .drain(cut..)
            .map(|m| make_antimessage(&m))
            .collect::<Result<Vec<_>, _>>()?;

        self.prediction_cache.split_off(&VirtualTime::new(restored.ticks() + 1));

        let cut = self.consumed.partition_point(|(t, _)| *t <= restored);
        let mut reinserted = 0;
        for (_, batch) in self.consumed.drain(cut..).collect::<Vec<_>>() {
            for m in batch {
                reinserted += 1;
                self.input_queue.annihilate(m);
            }
        }

        Ok(RollbackReport {
            restored_to: restored,
            antimessages,
            states_discarded,
            reinserted,
        })
    }

    /// Compares the cached prediction for `real_now` with the measured
    /// state. Beyond tolerance, the LP is rolled back to `real_now` and the
    /// measured state becomes authoritative there.
    pub fn verify(
        &mut self,
        real_now: RealClock,
        actual: NodeState,
    ) -> Result<Verification, ProtocolError> {
        let at = real_now.as_virtual();
        let predicted = *self
            .prediction_cache
            .get(&at)
            .ok_or(ProtocolError::MissingPrediction {
                node: self.node,
                at: real_now.now(),
            })?;
        let error = predicted.queue_len.abs_diff(actual.queue_len);
        if error <= self.theta {
            return Ok(Verification {
                outcome: VerifyOutcome::WithinTolerance { error },
                predicted,
                antimessages: Vec::new(),
            });
        }

        let antimessages = if self.lvt > at {
            self.rollback(at)?.antimessages
        } else {
            Vec::new()
        };
        let last = self.state_queue.back_mut().expect("state queue never empty");
        if last.at == at {
            last.state = actual;
        } else {
            // no saved state exactly at `at`: events up to it are absorbed
            // by the measured state
            let absorbed = self.input_queue.drain_positives_through(at);
            self.consumed.push((at, absorbed));
            self.state_queue.push_back(StateRecord { at, state: actual });
        }
        self.lvt = at;
        self.prediction_cache.insert(at, actual);
        Ok(Verification {
            outcome: VerifyOutcome::RolledBack {
                error,
                restored_to: at,
            },
            predicted,
            antimessages,
        })
    }

    /// Re-aims every pending prediction received after `after` toward the
    /// locally measured load.
    pub fn adjust_pending(
        &mut self,
        after: VirtualTime,
        local_load: f64,
        alpha: f64,
    ) -> Result<usize, ProtocolError> {
        let node = self.node;
        let mut n = 0;
        for m in self.input_queue.positives_mut() {
            if m.receive_time > after {
                *m = autoanaplasis_adjust(m, local_load, alpha, node)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Discards history older than `gvt`, keeping the newest saved state
    /// below it as the rollback floor.
    pub fn fossil_collect(&mut self, gvt: VirtualTime) -> FossilCounts {
        self.gvt_seen = self.gvt_seen.max(gvt);
        let below = self.state_queue.iter().take_while(|r| r.at < gvt).count();
        let states = below.saturating_sub(1);
        self.state_queue.drain(..states);

        let outputs = self.output_log.partition_point(|m| m.send_time < gvt);
        self.output_log.drain(..outputs);

        let kept = self.prediction_cache.split_off(&gvt);
        let cache = std::mem::replace(&mut self.prediction_cache, kept).len();

        let cut = self.consumed.partition_point(|(t, _)| *t < gvt);
        let inputs = self.consumed.drain(..cut).map(|(_, b)| b.len()).sum();

        FossilCounts {
            states,
            outputs,
            cache,
            inputs,
        }
    }
}
