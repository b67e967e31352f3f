//! Run metrics and deterministic report emission.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::ScenarioConfig;
use crate::logical_process::FossilCounts;
use crate::messages::NodeId;

/// One row per real tick, captured right after verification and the new
/// prediction window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickRow {
    pub tick: u64,
    pub real_now: u64,
    pub min_lvt: u64,
    pub gvt: u64,
    /// min LVT minus real time.
    pub lookahead: i64,
    pub rollbacks_cum: u64,
    /// Verification error per node, in report node order.
    pub errors: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub tolerance_rollbacks: u64,
    pub straggler_rollbacks: u64,
    /// Positive messages put into transit (predictions, forwards, link priming).
    pub messages_sent: u64,
    pub antimessages_sent: u64,
    pub delivered: u64,
    pub annihilated: u64,
    pub in_transit_at_end: u64,
    pub events_processed: u64,
    pub verifications: u64,
    pub steps: u64,
    pub gvt_computations: u64,
    pub fossil: FossilCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub nodes: Vec<NodeId>,
    pub series: Vec<TickRow>,
    pub totals: Totals,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub ticks: usize,
    pub mean_lookahead: f64,
    pub max_lookahead: i64,
    pub tolerance_rollbacks: u64,
    pub straggler_rollbacks: u64,
    pub total_rollbacks: u64,
    pub mean_abs_error: f64,
    /// Anti-messages over all messages sent.
    pub overhead_ratio: f64,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("report has no per-tick series")]
    EmptySeries,
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn summarize(report: &MetricsReport) -> Result<SummaryStats, MetricsError> {
    let series = &report.series;
    if series.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let n = series.len() as f64;
    let mean_lookahead = series.iter().map(|r| r.lookahead as f64).sum::<f64>() / n;
    let max_lookahead = series.iter().map(|r| r.lookahead).max().unwrap_or(0);
    let errors: Vec<u64> = series.iter().flat_map(|r| r.errors.iter().copied()).collect();
    let mean_abs_error = if errors.is_empty() {
        0.0
    } else {
        errors.iter().sum::<u64>() as f64 / errors.len() as f64
    };
    let t = &report.totals;
    let all = t.messages_sent + t.antimessages_sent;
    let overhead_ratio = if all == 0 {
        0.0
    } else {
        t.antimessages_sent as f64 / all as f64
    };
    Ok(SummaryStats {
        ticks: series.len(),
        mean_lookahead,
        max_lookahead,
        tolerance_rollbacks: t.tolerance_rollbacks,
        straggler_rollbacks: t.straggler_rollbacks,
        total_rollbacks: t.tolerance_rollbacks + t.straggler_rollbacks,
        mean_abs_error,
        overhead_ratio,
    })
}

pub fn to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("tick,real_now,min_lvt,gvt,lookahead,rollbacks_cum");
    for n in &report.nodes {
        write!(out, ",err_{n}").unwrap();
    }
    out.push('\n');
    for r in &report.series {
        write!(
            out,
            "{},{},{},{},{},{}",
            r.tick, r.real_now, r.min_lvt, r.gvt, r.lookahead, r.rollbacks_cum
        )
        .unwrap();
        for e in &r.errors {
            write!(out, ",{e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn to_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn render(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report),
    }
}

pub fn emit_report(
    report: &MetricsReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), MetricsError> {
    std::fs::write(path, render(report, format)).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })
}
