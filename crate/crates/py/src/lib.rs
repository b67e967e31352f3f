//! Python bindings. Configs and reports cross the boundary as JSON text;
//! structured results come back as plain dicts and lists.

use avnmp::harness::{self, Branch, ConfigError, EngineError, QueryAnswer, ScenarioConfig, SimEngine};
use avnmp::metrics::{self, MetricsReport, ReportFormat};
use avnmp::{NodeId, VirtualTime};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn config_err(e: ConfigError) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn engine_err(e: EngineError) -> PyErr {
    match e {
        EngineError::Config(c) => config_err(c),
        EngineError::UnknownNode(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Parses a config from JSON text and applies an optional seed override.
pub fn parse_config(config_json: &str, seed: Option<u64>) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::from_json(config_json)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_format(format: &str) -> PyResult<ReportFormat> {
    match format {
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        other => Err(PyValueError::new_err(format!("unknown format {other:?}, expected csv or json"))),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

/// A scenario being simulated step by step.
#[pyclass(name = "Engine", module = "avnmp_py")]
pub struct PyEngine {
    inner: SimEngine,
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (config_json, seed=None))]
    fn new(config_json: &str, seed: Option<u64>) -> PyResult<Self> {
        let cfg = parse_config(config_json, seed).map_err(config_err)?;
        Ok(PyEngine {
            inner: SimEngine::new(cfg).map_err(engine_err)?,
        })
    }

    /// One scheduler step. Returns a dict describing what happened.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.step().map_err(engine_err)?;
        let d = PyDict::new(py);
        match s.branch {
            Branch::Processed { node, lvt } => {
                d.set_item("branch", "processed")?;
                d.set_item("node", node.0)?;
                d.set_item("lvt", lvt.ticks())?;
            }
            Branch::Advanced { real_now } => {
                d.set_item("branch", "advanced")?;
                d.set_item("real_now", real_now)?;
            }
        }
        d.set_item("rollbacks", s.rollbacks)?;
        d.set_item("min_lvt", s.min_lvt.ticks())?;
        d.set_item("gvt", s.gvt.ticks())?;
        Ok(d)
    }

    fn run_to_end(&mut self) -> PyResult<()> {
        self.inner.run_to_end().map_err(engine_err)
    }

    #[getter]
    fn real_now(&self) -> u64 {
        self.inner.real_now()
    }

    #[getter]
    fn gvt(&self) -> u64 {
        self.inner.gvt().gvt.ticks()
    }

    #[getter]
    fn is_finished(&self) -> bool {
        self.inner.is_finished()
    }

    fn lvt(&self, node: u32) -> PyResult<u64> {
        self.inner
            .lp(NodeId(node))
            .map(|lp| lp.lvt().ticks())
            .ok_or_else(|| engine_err(EngineError::UnknownNode(NodeId(node))))
    }

    /// Predicted state of `node` at virtual time `t`, or None with the
    /// reason available from `why_not`.
    fn query_predicted<'py>(&self, py: Python<'py>, node: u32, t: u64) -> PyResult<Option<Bound<'py, PyDict>>> {
        match self.inner.query_predicted(NodeId(node), VirtualTime::new(t)).map_err(engine_err)? {
            QueryAnswer::Available(s) => {
                let d = PyDict::new(py);
                d.set_item("queue_len", s.queue_len)?;
                d.set_item("processed", s.processed)?;
                d.set_item("inst_load", s.inst_load)?;
                Ok(Some(d))
            }
            QueryAnswer::NotAvailable(_) => Ok(None),
        }
    }

    fn why_not(&self, node: u32, t: u64) -> PyResult<Option<String>> {
        match self.inner.query_predicted(NodeId(node), VirtualTime::new(t)).map_err(engine_err)? {
            QueryAnswer::Available(_) => Ok(None),
            QueryAnswer::NotAvailable(r) => Ok(Some(format!("{r:?}"))),
        }
    }

    #[pyo3(signature = (format="csv"))]
    fn report(&self, format: &str) -> PyResult<String> {
        Ok(metrics::render(&self.inner.report(), parse_format(format)?))
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        summary_of(py, &self.inner.report())
    }
}

fn summary_of<'py>(py: Python<'py>, report: &MetricsReport) -> PyResult<Bound<'py, PyAny>> {
    let s = metrics::summarize(report).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &serde_json::to_value(s).expect("summary serializes"))
}

/// Runs a scenario to completion and returns the rendered report.
#[pyfunction]
#[pyo3(signature = (config_json, format="csv", seed=None))]
fn run(config_json: &str, format: &str, seed: Option<u64>) -> PyResult<String> {
    let fmt = parse_format(format)?;
    let cfg = parse_config(config_json, seed).map_err(config_err)?;
    let report = harness::run(cfg).map_err(engine_err)?;
    Ok(metrics::render(&report, fmt))
}

/// `(node, tick, queue_len, processed, inst_load)`
type OracleRow = (u32, u64, u64, u64, u64);

/// Sequential trajectory, one row per node and tick.
#[pyfunction]
fn sequential_oracle(config_json: &str) -> PyResult<Vec<OracleRow>> {
    let cfg = parse_config(config_json, None).map_err(config_err)?;
    let traj = harness::sequential_oracle(&cfg).map_err(config_err)?;
    Ok(traj
        .into_iter()
        .map(|((n, t), s)| (n.0, t, s.queue_len, s.processed, s.inst_load))
        .collect())
}

/// Summary statistics of a JSON report.
#[pyfunction]
fn summarize<'py>(py: Python<'py>, report_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let report: MetricsReport = serde_json::from_str(report_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    summary_of(py, &report)
}

#[pymodule]
fn avnmp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sequential_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    Ok(())
}
