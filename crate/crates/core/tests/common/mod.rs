#![allow(dead_code)]

use std::collections::BTreeMap;

use avnmp::harness::{Link, ScenarioConfig, Topology};
use avnmp::{NodeId, PredictorKind, PredictorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Queue update written out independently of the library's transition.
pub fn fluid_step(q: u64, processed: u64, load: u64, cap: u64) -> (u64, u64) {
    let backlog = q + load;
    let served = if backlog < cap { backlog } else { cap };
    (backlog - served, processed + served)
}

/// Regenerates the predictor's noise stream: one ChaCha8 stream per tick.
pub fn noise(seed: u64, tick: u64, amp: u64) -> i64 {
    if amp == 0 {
        return 0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tick);
    rng.random_range(-(amp as i64)..=amp as i64)
}

pub struct Recount {
    pub rollback_ticks: Vec<u64>,
    pub errors: Vec<u64>,
}

/// Single-node replay of verification under a noisy predictor: the
/// predicted queue is stepped on the noisy loads, reset to the actual queue
/// whenever the error exceeds `theta`, and pending predictions are blended
/// toward the measured load at each reset.
#[allow(clippy::too_many_arguments)]
pub fn recount_noisy(
    truth: &BTreeMap<u64, u64>,
    seed: u64,
    amp: u64,
    theta: u64,
    cap: u64,
    delta: u64,
    alpha: f64,
    duration: u64,
) -> Recount {
    let truth_at = |t: u64| truth.get(&t).copied().unwrap_or(0);
    let mut pred_load: BTreeMap<u64, f64> = BTreeMap::new();
    let load_of = |t: u64, pred_load: &mut BTreeMap<u64, f64>| -> f64 {
        *pred_load
            .entry(t)
            .or_insert_with(|| (truth_at(t) as i64 + noise(seed, t, amp)).max(0) as f64)
    };
    let (mut aq, mut ap) = (0u64, 0u64);
    let (mut pq, mut pp) = (0u64, 0u64);
    let mut out = Recount {
        rollback_ticks: Vec::new(),
        errors: Vec::new(),
    };
    for t in 1..=duration {
        (aq, ap) = fluid_step(aq, ap, truth_at(t), cap);
        let l = load_of(t, &mut pred_load).round() as u64;
        (pq, pp) = fluid_step(pq, pp, l, cap);
        let err = pq.abs_diff(aq);
        out.errors.push(err);
        if err > theta {
            out.rollback_ticks.push(t);
            (pq, pp) = (aq, ap);
            for f in t + 1..t + delta {
                let old = load_of(f, &mut pred_load);
                pred_load.insert(f, alpha * truth_at(t) as f64 + (1.0 - alpha) * old);
            }
        }
    }
    let _ = pp;
    out
}

pub fn single_node(kind: PredictorKind, delta: u64, theta: u64, duration: u64, truth: Vec<(u64, u64)>, cap: u64) -> ScenarioConfig {
    ScenarioConfig::new(Topology::chain(1, 1), PredictorSpec::new(kind, delta), theta, duration, truth, cap)
}

pub fn random_truth(rng: &mut ChaCha8Rng, duration: u64, max_load: u64) -> Vec<(u64, u64)> {
    (1..=duration)
        .filter_map(|t| {
            if rng.random_bool(0.8) {
                Some((t, rng.random_range(0..=max_load)))
            } else {
                None
            }
        })
        .collect()
}

/// Random feed-forward topology with at most `max_nodes` nodes: each node
/// but the sink links to some later node, giving chains and fan-ins.
pub fn random_topology(rng: &mut ChaCha8Rng, max_nodes: u32) -> Topology {
    let n = rng.random_range(1..=max_nodes);
    let nodes: Vec<NodeId> = (1..=n).map(NodeId).collect();
    let mut links = Vec::new();
    for i in 1..n {
        let dst = rng.random_range(i + 1..=n);
        links.push(Link {
            src: NodeId(i),
            dst: NodeId(dst),
            latency: rng.random_range(1..=4),
        });
    }
    Topology {
        nodes,
        links,
        entry_node: NodeId(1),
    }
}
