mod common;

use std::collections::BTreeMap;

use avnmp::harness::{sequential_oracle, Branch, Capacity, EngineError, QueryAnswer, ScenarioConfig, SimEngine, Topology};
use avnmp::logical_process::NotAvailable;
use avnmp::metrics::{summarize, to_csv, to_json};
use avnmp::{run, NodeId, PredictorKind, PredictorSpec, VirtualTime};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vt(t: u64) -> VirtualTime {
    VirtualTime::new(t)
}

fn step_until(engine: &mut SimEngine, real_now: u64) {
    while engine.real_now() < real_now {
        engine.step().unwrap();
    }
    engine.settle().unwrap();
}

#[test]
fn idle_engine_advances_time_and_verifies() {
    let cfg = single_node(PredictorKind::ConstantRate { rate: 0 }, 1, 0, 20, vec![], 5);
    let mut e = SimEngine::new(cfg).unwrap();
    step_until(&mut e, 5);
    assert!(e.lps().all(|lp| lp.next_event_time().is_none()));
    let before = e.totals().verifications;
    let s = e.step().unwrap();
    assert_eq!(s.branch, Branch::Advanced { real_now: 6 });
    assert_eq!(e.totals().verifications, before + 1);
}

#[test]
fn window_blocks_events_past_horizon() {
    let cfg = ScenarioConfig::new(
        Topology::chain(2, 1),
        PredictorSpec::new(PredictorKind::ConstantRate { rate: 2 }, 20),
        0,
        50,
        vec![],
        5,
    );
    let mut e = SimEngine::new(cfg).unwrap();
    step_until(&mut e, 10);
    assert_eq!(e.lp(NodeId(1)).unwrap().lvt(), vt(30));
    // node 1's send at 30 lands on node 2 at 31, one past the window edge
    let lp = e.lp(NodeId(2)).unwrap();
    assert_eq!(lp.lvt(), vt(30));
    assert_eq!(lp.next_event_time(), Some(vt(31)));
    assert_eq!(e.step().unwrap().branch, Branch::Advanced { real_now: 11 });
}

#[test]
fn earliest_event_runs_first() {
    // fan-in: node 2 (idle source) and node 1 both feed node 3
    let mut topo = Topology::chain(1, 1);
    topo.nodes = vec![NodeId(1), NodeId(2), NodeId(3)];
    topo.links = vec![
        avnmp::harness::Link { src: NodeId(1), dst: NodeId(3), latency: 1 },
        avnmp::harness::Link { src: NodeId(2), dst: NodeId(3), latency: 3 },
    ];
    let cfg = ScenarioConfig::new(topo, PredictorSpec::new(PredictorKind::Perfect, 10), 0, 40, vec![(1, 9), (2, 4)], 3);
    let mut e = SimEngine::new(cfg).unwrap();
    while !e.is_finished() {
        let heads: BTreeMap<NodeId, Option<VirtualTime>> = {
            // heads as they will be after in-transit delivery
            let mut probe = e.clone();
            probe.deliver_in_transit().unwrap();
            probe.lps().map(|lp| (lp.node(), lp.next_event_time())).collect()
        };
        let s = e.step().unwrap();
        if let Branch::Processed { node, lvt } = s.branch {
            for (&n, head) in &heads {
                if let Some(h) = *head {
                    assert!(lvt < h || (lvt == h && node <= n), "{node}@{lvt} ran before {n}@{h}");
                }
            }
        }
    }
}

#[test]
fn perfect_single_node_never_rolls_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = random_truth(&mut rng, 100, 9);
    let cfg = single_node(PredictorKind::Perfect, 10, 0, 100, truth, 5);
    let report = run(cfg).unwrap();
    assert_eq!(report.totals.tolerance_rollbacks, 0);
    assert_eq!(report.totals.straggler_rollbacks, 0);
    assert_eq!(report.totals.antimessages_sent, 0);
    assert_eq!(report.series.len(), 100);
    assert_eq!(summarize(&report).unwrap().overhead_ratio, 0.0);
}

#[test]
fn runs_are_byte_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cfg = ScenarioConfig::new(
        random_topology(&mut rng, 6),
        PredictorSpec::new(PredictorKind::NoisyTrace { amplitude: 6, seed: None }, 12),
        2,
        300,
        random_truth(&mut rng, 300, 8),
        4,
    );
    cfg.seed = 77;
    let a = run(cfg.clone()).unwrap();
    let b = run(cfg.clone()).unwrap();
    assert_eq!(to_csv(&a), to_csv(&b));
    assert_eq!(to_json(&a), to_json(&b));
    cfg.seed = 78;
    assert_ne!(to_json(&run(cfg).unwrap()), to_json(&a));
}

#[test]
fn noisy_zero_tolerance_rollbacks_match_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = random_truth(&mut rng, 400, 12);
    let mut cfg = single_node(PredictorKind::NoisyTrace { amplitude: 10, seed: None }, 8, 0, 400, truth.clone(), 6);
    cfg.seed = 4;
    let mut e = SimEngine::new(cfg).unwrap();
    e.run_to_end().unwrap();
    let expected = recount_noisy(&truth.into_iter().collect(), 4, 10, 0, 6, 8, 0.5, 400);
    let got: Vec<u64> = e.tolerance_log().iter().map(|r| r.tick).collect();
    assert_eq!(got, expected.rollback_ticks);
    let nonzero: Vec<u64> = expected
        .errors
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > 0)
        .map(|(i, _)| i as u64 + 1)
        .collect();
    assert_eq!(got, nonzero);
    assert!(!got.is_empty());
}

#[test]
fn mean_error_equals_mean_noise_magnitude_when_saturated() {
    // load far above capacity keeps the queue from emptying, and alpha=0
    // leaves the noisy payloads untouched, so each tick's error is |noise|
    let truth: Vec<(u64, u64)> = (1..=300).map(|t| (t, 50)).collect();
    let mut cfg = single_node(PredictorKind::NoisyTrace { amplitude: 7, seed: Some(99) }, 5, 0, 300, truth, 1);
    cfg.predictor.alpha = 0.0;
    let report = run(cfg).unwrap();
    let mags: Vec<u64> = (1..=300).map(|t| noise(99, t, 7).unsigned_abs()).collect();
    let expected = mags.iter().sum::<u64>() as f64 / mags.len() as f64;
    assert_eq!(summarize(&report).unwrap().mean_abs_error, expected);
}

#[test]
fn query_predicted_future_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = random_truth(&mut rng, 100, 9);
    let cfg = single_node(PredictorKind::Perfect, 30, 0, 100, truth, 5);
    let oracle = sequential_oracle(&cfg).unwrap();
    let mut e = SimEngine::new(cfg).unwrap();
    step_until(&mut e, 20);
    assert_eq!(e.lp(NodeId(1)).unwrap().lvt(), vt(50));
    assert_eq!(
        e.query_predicted(NodeId(1), vt(40)).unwrap(),
        QueryAnswer::Available(oracle[&(NodeId(1), 40)])
    );
    assert_eq!(
        e.query_predicted(NodeId(1), vt(80)).unwrap(),
        QueryAnswer::NotAvailable(NotAvailable::BeyondLvt)
    );
    e.refresh_gvt().unwrap();
    let gvt = e.gvt().gvt;
    assert!(gvt >= vt(20));
    assert_eq!(
        e.query_predicted(NodeId(1), vt(5)).unwrap(),
        QueryAnswer::NotAvailable(NotAvailable::Fossilized)
    );
    assert!(matches!(e.query_predicted(NodeId(9), vt(5)), Err(EngineError::UnknownNode(_))));
}

#[test]
fn chain_perfect_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = random_truth(&mut rng, 200, 10);
    let mut cfg = ScenarioConfig::new(Topology::chain(4, 2), PredictorSpec::new(PredictorKind::Perfect, 15), 0, 200, truth, 6);
    cfg.capacity = Capacity::PerNode([(NodeId(1), 6), (NodeId(2), 4), (NodeId(3), 5), (NodeId(4), 2)].into());
    let oracle = sequential_oracle(&cfg).unwrap();
    let mut e = SimEngine::new(cfg).unwrap();
    e.record_trajectory(true);
    e.run_to_end().unwrap();
    let traj = e.verified_trajectory().unwrap();
    assert_eq!(traj.len(), 4 * 200);
    for (k, s) in traj {
        assert_eq!(*s, oracle[k], "mismatch at {k:?}");
    }
    assert_eq!(e.totals().tolerance_rollbacks, 0);
}

#[test]
fn noisy_chain_keeps_tolerance_and_conserves_messages() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let truth = random_truth(&mut rng, 500, 10);
    let cfg = ScenarioConfig::new(
        Topology::chain(4, 2),
        PredictorSpec::new(PredictorKind::NoisyTrace { amplitude: 8, seed: None }, 20),
        3,
        500,
        truth,
        5,
    );
    let mut e = SimEngine::new(cfg).unwrap();
    e.run_to_end().unwrap();
    let t = e.report().totals;
    assert!(t.tolerance_rollbacks > 0);
    assert!(t.straggler_rollbacks > 0, "downstream nodes should see stragglers");
    assert_eq!(t.verifications, 4 * 500);
    // every message sent was delivered or is still travelling
    assert_eq!(t.messages_sent + t.antimessages_sent, t.delivered + t.in_transit_at_end);
    // each annihilation consumes one anti; the rest are parked
    let parked: u64 = e.lps().map(|lp| lp.input_queue().anti_count() as u64).sum();
    let antis_in_transit = e.in_transit().filter(|m| m.is_anti()).count() as u64;
    assert_eq!(t.antimessages_sent, t.annihilated + parked + antis_in_transit);
    assert!(t.messages_sent >= t.antimessages_sent);
    let (lo, hi) = e.lookahead_extremes();
    assert!(lo >= 0 && hi <= 20, "lookahead out of [0, delta]: {lo}..{hi}");
}

#[test]
fn linear_extrapolation_runs() {
    let truth: Vec<(u64, u64)> = (1..=200).map(|t| (t, t / 10)).collect();
    let cfg = ScenarioConfig::new(
        Topology::chain(2, 1),
        PredictorSpec::new(PredictorKind::LinearExtrapolation { window: 4 }, 10),
        2,
        200,
        truth,
        30,
    );
    let report = run(cfg).unwrap();
    assert_eq!(report.series.len(), 200);
    assert!(report.series.iter().all(|r| r.lookahead >= 0 && r.lookahead <= 10));
}

#[test]
fn invalid_config_is_rejected_with_field() {
    let mut cfg = single_node(PredictorKind::Perfect, 5, 0, 10, vec![], 5);
    cfg.capacity = Capacity::Uniform(0);
    match SimEngine::new(cfg) {
        Err(EngineError::Config(avnmp::harness::ConfigError::Invalid { field, .. })) => assert_eq!(field, "capacity"),
        other => panic!("unexpected {other:?}"),
    }
}
