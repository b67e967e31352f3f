//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration (or engine) error, 2 I/O error.
//! `AVNMP_SEED`, when set, overrides the config seed; `--seed` overrides both.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::harness::{sequential_oracle, ConfigError, EngineError, QueryAnswer, ScenarioConfig, SimEngine};
use crate::messages::NodeId;
use crate::metrics::{self, ReportFormat};
use crate::timebase::VirtualTime;

pub const SEED_ENV: &str = "AVNMP_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "avnmp", version, about = "Predictive network management simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and emit its metrics report.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario, then ask one node for its predicted state at a time.
    Query {
        config: PathBuf,
        #[arg(long)]
        node: u32,
        #[arg(long)]
        time: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit the sequential (non-speculative) state trajectory.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(c) => c.into(),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, env_seed: Option<&str>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = env_seed {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_out(out: Option<&Path>, text: &str, stdout: &mut dyn std::io::Write) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("writing {}: {e}", p.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Io(format!("writing stdout: {e}"))),
    }
}

fn oracle_csv(cfg: &ScenarioConfig) -> Result<String, Failure> {
    let traj = sequential_oracle(cfg)?;
    let mut s = String::from("node,tick,queue_len,processed,inst_load\n");
    for ((n, t), st) in &traj {
        writeln!(s, "{n},{t},{},{},{}", st.queue_len, st.processed, st.inst_load).unwrap();
    }
    Ok(s)
}

fn oracle_json(cfg: &ScenarioConfig) -> Result<String, Failure> {
    let traj = sequential_oracle(cfg)?;
    let rows: Vec<serde_json::Value> = traj
        .iter()
        .map(|((n, t), st)| serde_json::json!({"node": n, "tick": t, "state": st}))
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).expect("trajectory serializes");
    s.push('\n');
    Ok(s)
}

fn execute(cli: Cli, env_seed: Option<&str>, stdout: &mut dyn std::io::Write) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            seed,
        } => {
            let cfg = load_config(&config, seed, env_seed)?;
            let report = crate::harness::run(cfg)?;
            write_out(out.as_deref(), &metrics::render(&report, format.into()), stdout)
        }
        Command::Query {
            config,
            node,
            time,
            seed,
        } => {
            let cfg = load_config(&config, seed, env_seed)?;
            let mut engine = SimEngine::new(cfg)?;
            engine.run_to_end()?;
            let node = NodeId(node);
            let answer = engine.query_predicted(node, VirtualTime::new(time))?;
            let body = match answer {
                QueryAnswer::Available(state) => serde_json::json!({
                    "node": node, "time": time, "real_now": engine.real_now(), "state": state,
                }),
                QueryAnswer::NotAvailable(reason) => serde_json::json!({
                    "node": node, "time": time, "real_now": engine.real_now(), "not_available": reason,
                }),
            };
            let mut text = serde_json::to_string_pretty(&body).expect("answer serializes");
            text.push('\n');
            write_out(None, &text, stdout)
        }
        Command::Oracle { config, out, format } => {
            let cfg = ScenarioConfig::load(&config)?;
            let text = match format {
                Format::Csv => oracle_csv(&cfg)?,
                Format::Json => oracle_json(&cfg)?,
            };
            write_out(out.as_deref(), &text, stdout)
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with<I, T>(
    args: I,
    env_seed: Option<&str>,
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    match execute(cli, env_seed, stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Io(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_IO
        }
    }
}
