use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driving_process::{DrivingProcess, PredictError, TruthTrace};
use crate::logical_process::{
    DeliveryEffect, LogicalProcess, NodeState, NotAvailable, ProtocolError, StepResult,
};
use crate::messages::{MessageId, NodeId, Origin, PredictionPayload, Streptichron};
use crate::metrics::{MetricsReport, TickRow, Totals};
use crate::timebase::{advance_real_time, compute_gvt, GvtSnapshot, RealClock, TimeError, VirtualTime};

use super::config::{ConfigError, ScenarioConfig};
use super::ground_truth::GroundTruth;
use super::oracle::Trajectory;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("GVT regressed from {prev} to {next}")]
    GvtRegression { prev: VirtualTime, next: VirtualTime },
    #[error("rollback on node {node} undoes events from {undo_from}, below GVT {gvt}")]
    GvtSafety {
        node: NodeId,
        undo_from: VirtualTime,
        gvt: VirtualTime,
    },
    #[error("node {node} ran to {lvt}, past the window edge {horizon}")]
    WindowOverrun {
        node: NodeId,
        lvt: VirtualTime,
        horizon: VirtualTime,
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("run already reached its duration")]
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// A logical process executed its next event.
    Processed { node: NodeId, lvt: VirtualTime },
    /// No LP could proceed inside the window; real time moved one tick.
    Advanced { real_now: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub branch: Branch,
    pub rollbacks: u64,
    pub real_now: u64,
    pub min_lvt: VirtualTime,
    pub gvt: VirtualTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryAnswer {
    Available(NodeState),
    NotAvailable(NotAvailable),
}

/// One tolerance rollback: where, when, and how far off the prediction was.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToleranceEvent {
    pub tick: u64,
    pub node: NodeId,
    pub error: u64,
}

/// The simulated active network.
///
/// Each [`step`](Self::step) first delivers whatever was in transit, then
/// makes one scheduling decision: run the globally earliest event inside the
/// window `real_now + delta`, or, if none is eligible, advance real time by
/// one tick and verify every LP against the measured network.
#[derive(Debug, Clone)]
pub struct SimEngine {
    config: ScenarioConfig,
    truth: TruthTrace,
    clock: RealClock,
    lps: BTreeMap<NodeId, LogicalProcess>,
    driver: DrivingProcess,
    in_transit: VecDeque<Streptichron>,
    ground: GroundTruth,
    history: Vec<(u64, u64)>,
    gvt: GvtSnapshot,
    gvt_history: Vec<GvtSnapshot>,
    totals: Totals,
    series: Vec<TickRow>,
    tolerance_log: Vec<ToleranceEvent>,
    verified: Option<Trajectory>,
    min_lookahead_seen: i64,
    max_lookahead_seen: i64,
}

impl SimEngine {
    pub fn new(config: ScenarioConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let truth = config.truth_trace()?;
        let topo = &config.topology;
        let lps: BTreeMap<NodeId, LogicalProcess> = topo
            .nodes
            .iter()
            .map(|&n| {
                let lp = LogicalProcess::new(n, config.capacity_of(n), config.theta, topo.downstream(n));
                (n, lp)
            })
            .collect();
        let idle: Vec<NodeId> = topo.sources().into_iter().filter(|n| *n != topo.entry_node).collect();
        let driver = DrivingProcess::new(config.predictor, topo.entry_node, truth.clone(), config.seed)
            .with_idle_sources(idle);
        let ground = GroundTruth::new(&config);
        let mut engine = SimEngine {
            truth,
            clock: RealClock::default(),
            lps,
            driver,
            in_transit: VecDeque::new(),
            ground,
            history: Vec::new(),
            gvt: GvtSnapshot {
                gvt: VirtualTime::ZERO,
                computed_at: 0,
            },
            gvt_history: Vec::new(),
            totals: Totals::default(),
            series: Vec::new(),
            tolerance_log: Vec::new(),
            verified: None,
            min_lookahead_seen: i64::MAX,
            max_lookahead_seen: i64::MIN,
            config,
        };
        engine.prime_links()?;
        let window = engine.driver.fill_window(&engine.history, engine.clock)?;
        engine.send_all(window);
        engine.refresh_gvt()?;
        Ok(engine)
    }

    /// Links start empty: each downstream node sees zero load until the
    /// first forwarded traffic can reach it.
    fn prime_links(&mut self) -> Result<(), EngineError> {
        let mut seq = 0;
        let mut primed = Vec::new();
        for link in &self.config.topology.links {
            for t in 1..=link.latency {
                let id = MessageId::new(Origin::Node(link.src), u64::MAX - seq);
                seq += 1;
                let m = Streptichron::new(
                    id,
                    Origin::Node(link.src),
                    link.dst,
                    VirtualTime::ZERO,
                    VirtualTime::new(t),
                    PredictionPayload::constant(0.0),
                )
                .map_err(ProtocolError::from)?;
                primed.push(m);
            }
        }
        self.send_all(primed);
        Ok(())
    }

    /// Keeps the predicted state seen at every verification, keyed by
    /// `(node, tick)`.
    pub fn record_trajectory(&mut self, on: bool) {
        self.verified = on.then(Trajectory::new);
    }

    pub fn verified_trajectory(&self) -> Option<&Trajectory> {
        self.verified.as_ref()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn truth(&self) -> &TruthTrace {
        &self.truth
    }

    pub fn real_now(&self) -> u64 {
        self.clock.now()
    }

    pub fn gvt(&self) -> GvtSnapshot {
        self.gvt
    }

    pub fn gvt_history(&self) -> &[GvtSnapshot] {
        &self.gvt_history
    }

    pub fn totals(&self) -> &Totals {
        &self.totals
    }

    pub fn series(&self) -> &[TickRow] {
        &self.series
    }

    pub fn tolerance_log(&self) -> &[ToleranceEvent] {
        &self.tolerance_log
    }

    pub fn lp(&self, node: NodeId) -> Option<&LogicalProcess> {
        self.lps.get(&node)
    }

    pub fn lps(&self) -> impl Iterator<Item = &LogicalProcess> {
        self.lps.values()
    }

    pub fn actual_state(&self, node: NodeId) -> Option<NodeState> {
        self.ground.state(node)
    }

    pub fn in_transit(&self) -> impl Iterator<Item = &Streptichron> {
        self.in_transit.iter()
    }

    /// Smallest and largest `min LVT - real_now` observed after any step.
    pub fn lookahead_extremes(&self) -> (i64, i64) {
        (self.min_lookahead_seen, self.max_lookahead_seen)
    }

    pub fn min_lvt(&self) -> VirtualTime {
        self.lps.values().map(|lp| lp.lvt()).min().unwrap_or(VirtualTime::INFINITY)
    }

    pub fn horizon(&self) -> VirtualTime {
        VirtualTime::new(self.clock.now() + self.config.predictor.delta)
    }

    pub fn is_finished(&self) -> bool {
        self.clock.now() >= self.config.duration
    }

    fn send_all(&mut self, msgs: Vec<Streptichron>) {
        for m in msgs {
            if m.is_anti() {
                self.totals.antimessages_sent += 1;
            } else {
                self.totals.messages_sent += 1;
            }
            self.in_transit.push_back(m);
        }
    }

    fn check_rollback(&self, node: NodeId, undo_from: VirtualTime) -> Result<(), EngineError> {
        if undo_from < self.gvt.gvt {
            return Err(EngineError::GvtSafety {
                node,
                undo_from,
                gvt: self.gvt.gvt,
            });
        }
        Ok(())
    }

    /// Delivers everything that was in transit when called. Anti-messages
    /// produced by the resulting rollbacks stay in transit.
    pub fn deliver_in_transit(&mut self) -> Result<u64, EngineError> {
        let batch: Vec<Streptichron> = self.in_transit.drain(..).collect();
        let mut rollbacks = 0;
        for m in batch {
            let node = m.dst;
            let lp = self.lps.get_mut(&node).ok_or(EngineError::UnknownNode(node))?;
            self.totals.delivered += 1;
            match lp.deliver(m)? {
                DeliveryEffect::Enqueued => {}
                DeliveryEffect::Annihilated => self.totals.annihilated += 1,
                DeliveryEffect::RollbackTriggered { at, report, then } => {
                    self.check_rollback(node, at)?;
                    rollbacks += 1;
                    self.totals.straggler_rollbacks += 1;
                    if then == crate::messages::Annihilation::Annihilated {
                        self.totals.annihilated += 1;
                    }
                    self.send_all(report.antimessages);
                }
            }
        }
        Ok(rollbacks)
    }

    fn pick_next(&self) -> Option<NodeId> {
        let horizon = self.horizon();
        let mut best: Option<(VirtualTime, NodeId)> = None;
        for (&n, lp) in &self.lps {
            if let Some(t) = lp.next_event_time() {
                if t <= horizon && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, n));
                }
            }
        }
        best.map(|(_, n)| n)
    }

    pub fn step(&mut self) -> Result<StepSummary, EngineError> {
        let mut rollbacks = self.deliver_in_transit()?;
        let branch = match self.pick_next() {
            Some(node) => self.process(node)?,
            None => {
                if self.is_finished() {
                    return Err(EngineError::Finished);
                }
                let (branch, n) = self.advance()?;
                rollbacks += n;
                branch
            }
        };
        self.totals.steps += 1;
        self.observe_lookahead();
        if self.totals.steps.is_multiple_of(self.config.gvt_every) {
            self.refresh_gvt()?;
        }
        Ok(StepSummary {
            branch,
            rollbacks,
            real_now: self.clock.now(),
            min_lvt: self.min_lvt(),
            gvt: self.gvt.gvt,
        })
    }

    fn process(&mut self, node: NodeId) -> Result<Branch, EngineError> {
        let horizon = self.horizon();
        let lp = self.lps.get_mut(&node).expect("picked node exists");
        match lp.process_next(horizon)? {
            StepResult::Processed { lvt, emitted, .. } => {
                if lvt > horizon {
                    return Err(EngineError::WindowOverrun { node, lvt, horizon });
                }
                self.totals.events_processed += 1;
                self.send_all(emitted.into_iter().collect());
                Ok(Branch::Processed { node, lvt })
            }
            StepResult::Blocked => unreachable!("picked LP has an eligible event"),
        }
    }

    fn advance(&mut self) -> Result<(Branch, u64), EngineError> {
        self.clock = advance_real_time(self.clock, 1)?;
        let now = self.clock.now();
        let entry_load = self.truth.load_at(now);
        self.ground.advance(entry_load);
        self.history.push((now, entry_load));

        let alpha = self.config.predictor.alpha;
        let mut errors = Vec::with_capacity(self.lps.len());
        let mut rollbacks = 0;
        let nodes: Vec<NodeId> = self.lps.keys().copied().collect();
        for node in nodes {
            let actual = self.ground.state(node).expect("ground truth covers every node");
            let lp = self.lps.get_mut(&node).expect("node exists");
            let v = lp.verify(self.clock, actual)?;
            self.totals.verifications += 1;
            if let Some(traj) = self.verified.as_mut() {
                traj.insert((node, now), v.predicted);
            }
            errors.push(v.outcome.error());
            if v.outcome.rolled_back() {
                lp.adjust_pending(self.clock.as_virtual(), actual.inst_load as f64, alpha)?;
                self.check_rollback(node, VirtualTime::new(now + 1))?;
                rollbacks += 1;
                self.totals.tolerance_rollbacks += 1;
                self.tolerance_log.push(ToleranceEvent {
                    tick: now,
                    node,
                    error: v.outcome.error(),
                });
                self.send_all(v.antimessages);
            }
        }

        let window = self.driver.fill_window(&self.history, self.clock)?;
        self.send_all(window);

        let min_lvt = self.min_lvt().ticks();
        self.series.push(TickRow {
            tick: self.series.len() as u64,
            real_now: now,
            min_lvt,
            gvt: self.gvt.gvt.ticks(),
            lookahead: min_lvt as i64 - now as i64,
            rollbacks_cum: self.totals.tolerance_rollbacks + self.totals.straggler_rollbacks,
            errors,
        });
        Ok((Branch::Advanced { real_now: now }, rollbacks))
    }

    fn observe_lookahead(&mut self) {
        let l = self.min_lvt().ticks() as i64 - self.clock.now() as i64;
        self.min_lookahead_seen = self.min_lookahead_seen.min(l);
        self.max_lookahead_seen = self.max_lookahead_seen.max(l);
    }

    /// Recomputes GVT and fossil-collects every LP.
    ///
    /// The next verification tick is included as a pending receive time:
    /// until real time reaches a prediction it may still be rolled back.
    pub fn refresh_gvt(&mut self) -> Result<GvtSnapshot, EngineError> {
        let lvts: Vec<VirtualTime> = self.lps.values().map(|lp| lp.lvt()).collect();
        let mut pending: Vec<VirtualTime> = self.in_transit.iter().map(|m| m.receive_time).collect();
        if !self.is_finished() {
            pending.push(VirtualTime::new(self.clock.now() + 1));
        }
        let snap = compute_gvt(&lvts, &pending, self.clock);
        if snap.gvt < self.gvt.gvt {
            return Err(EngineError::GvtRegression {
                prev: self.gvt.gvt,
                next: snap.gvt,
            });
        }
        self.gvt = snap;
        self.gvt_history.push(snap);
        self.totals.gvt_computations += 1;
        for lp in self.lps.values_mut() {
            self.totals.fossil += lp.fossil_collect(snap.gvt);
        }
        Ok(snap)
    }

    /// Runs every event already eligible inside the window without moving
    /// real time.
    pub fn settle(&mut self) -> Result<(), EngineError> {
        loop {
            self.deliver_in_transit()?;
            let Some(node) = self.pick_next() else {
                break;
            };
            self.process(node)?;
            self.totals.steps += 1;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<(), EngineError> {
        while !self.is_finished() {
            self.step()?;
        }
        self.settle()
    }

    pub fn query_predicted(&self, node: NodeId, t: VirtualTime) -> Result<QueryAnswer, EngineError> {
        let lp = self.lps.get(&node).ok_or(EngineError::UnknownNode(node))?;
        Ok(match lp.query(t) {
            Ok(s) => QueryAnswer::Available(s),
            Err(NotAvailable::NoEvent) if t < self.gvt.gvt => QueryAnswer::NotAvailable(NotAvailable::Fossilized),
            Err(reason) => QueryAnswer::NotAvailable(reason),
        })
    }

    pub fn report(&self) -> MetricsReport {
        let mut totals = self.totals;
        totals.in_transit_at_end = self.in_transit.len() as u64;
        MetricsReport {
            seed: self.config.seed,
            nodes: self.lps.keys().copied().collect(),
            series: self.series.clone(),
            totals,
            config: self.config.clone(),
        }
    }
}

pub fn run(config: ScenarioConfig) -> Result<MetricsReport, EngineError> {
    let mut engine = SimEngine::new(config)?;
    engine.run_to_end()?;
    Ok(engine.report())
}
