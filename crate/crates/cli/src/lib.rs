//! Command-line front end: config parsing, flow runs and the check suites.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{Map, Value};
use thiserror::Error;

use symflow::flow::{run_with_observer, RunConfig, RunOutcome};
use symflow::io::{write_diagnostics_csv, write_map};
use symflow::verify::{self, Level};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }
}

impl From<symflow::Error> for CliError {
    fn from(e: symflow::Error) -> Self {
        match e {
            symflow::Error::Config { .. } => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "symflow",
    version,
    about = "Moment-map flows of torus diffeomorphisms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key=value` override, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the flow on the 2-torus.
    Flow2(RunArgs),
    /// Run the flow on the 4-torus.
    Flow4(RunArgs),
    /// Run the verification suites.
    Check {
        #[arg(long, default_value = "fast")]
        level: Level,
    },
    /// Verify the symbol determinants and ellipticity.
    Symbol {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Print the resolved config and derived run parameters without running.
    Describe(RunArgs),
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Reads a JSON object from `path` (or starts from `{}`), applies
/// `key=value` overrides, fills defaults and validates.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut obj = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => {
                    return Err(CliError::Validation(format!(
                        "{}: expected a JSON object",
                        p.display()
                    )))
                }
                Err(e) => {
                    return Err(CliError::Validation(format!(
                        "{}: parse error at line {}, column {}: {e}",
                        p.display(),
                        e.line(),
                        e.column()
                    )))
                }
            }
        }
        None => Map::new(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("override {o:?} is not key=value")))?;
        obj.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    let cfg: RunConfig = serde_json::from_value(Value::Object(obj))
        .map_err(|e| CliError::Validation(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn config_for(args: &RunArgs, dim: Option<usize>) -> Result<RunConfig, CliError> {
    let mut overrides = args.overrides.clone();
    if let Some(d) = dim {
        // the subcommand fixes the dimension; a conflicting file value is an error
        let cfg_file_dim = args
            .config
            .as_deref()
            .and_then(|p| fs::read_to_string(p).ok())
            .and_then(|t| serde_json::from_str::<Value>(&t).ok())
            .and_then(|v| v.get("dim").and_then(Value::as_u64));
        let set_dim = args
            .overrides
            .iter()
            .any(|o| o.split_once('=').is_some_and(|(k, _)| k.trim() == "dim"));
        match cfg_file_dim {
            Some(x) if x as usize != d && !set_dim => {
                return Err(CliError::Validation(format!(
                    "invalid configuration: dim: flow{d} requires dim = {d}, got {x}"
                )))
            }
            _ if !set_dim => overrides.insert(0, format!("dim={d}")),
            _ => {}
        }
    }
    let cfg = parse_config(args.config.as_deref(), &overrides)?;
    if let Some(d) = dim {
        if cfg.dim != d {
            return Err(CliError::Validation(format!(
                "invalid configuration: dim: flow{d} requires dim = {d}, got {}",
                cfg.dim
            )));
        }
    }
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Runs the flow and writes `diagnostics.csv`, `summary.json` and map
/// snapshots (`map_000000`, every `snapshot_every` steps, and `map_final`).
pub fn cmd_flow(
    cfg: &RunConfig,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<RunOutcome<f64>, CliError> {
    fs::create_dir_all(out).map_err(io_err)?;
    let every = cfg.snapshot_every;
    let outcome = run_with_observer::<f64>(cfg, |st| {
        let k = st.accepted_steps();
        if k == 0 || (every > 0 && k % every == 0) {
            write_map(&out.join(format!("map_{k:06}")), &st.f)?;
        }
        Ok(())
    })?;
    write_diagnostics_csv(&out.join("diagnostics.csv"), &outcome.records)?;
    write_map(&out.join("map_final"), &outcome.final_map)?;
    let summary = outcome.summary();
    let json = serde_json::to_string_pretty(&summary).map_err(io_err)?;
    fs::write(out.join("summary.json"), json + "\n").map_err(io_err)?;
    writeln!(
        stdout,
        "steps {}  t {:.6e}  phi0 {:.6e}  phiT {:.6e}  residual order {}",
        summary.steps,
        summary.t_final,
        summary.phi0,
        summary.phi_t,
        summary
            .residual_order
            .map_or("-".into(), |r| format!("{r:.3}"))
    )
    .map_err(io_err)?;
    if let Some(e) = &outcome.aborted {
        return Err(CliError::Runtime(format!(
            "integration aborted after {} steps: {e} (diagnostics in {})",
            summary.steps,
            out.display()
        )));
    }
    Ok(outcome)
}

pub fn cmd_check(level: Level, stdout: &mut dyn Write) -> Result<(), CliError> {
    let report = verify::run_suite(level)?;
    writeln!(stdout, "{report}").map_err(io_err)?;
    match report.first_failure() {
        Some(f) => Err(CliError::CheckFailed(format!("check failed: {f}"))),
        None => Ok(()),
    }
}

pub fn cmd_symbol(samples: usize, stdout: &mut dyn Write) -> Result<(), CliError> {
    let checks = verify::symbol_suite(samples)?;
    for c in &checks {
        writeln!(stdout, "{c}").map_err(io_err)?;
    }
    match checks.iter().find(|c| !c.passed) {
        Some(f) => Err(CliError::CheckFailed(format!("check failed: {f}"))),
        None => Ok(()),
    }
}

pub fn cmd_describe(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let f = cfg.initial_map::<f64>()?;
    let eval = symflow::flow::Evaluation::at(&f, cfg.dealias)?;
    let dt = symflow::flow::auto_dt_for(&grid, eval.max_density());
    let mut text = serde_json::to_string_pretty(cfg).map_err(io_err)? + "\n";
    text += &format!("grid points      {}\n", grid.point_count());
    text += &format!("phi(0)           {:.6e}\n", eval.phi);
    text += &format!(
        "min/max density  {:.6} / {:.6}\n",
        eval.min_density(),
        eval.max_density()
    );
    text += &format!("explicit dt      {dt:.6e}\n");
    text += &format!("gauge window     {} steps\n", cfg.gauge_window());
    stdout.write_all(text.as_bytes()).map_err(io_err)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_cli<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Flow2(a) | Command::Flow4(a) => {
            let dim = if matches!(cli.command, Command::Flow2(_)) {
                2
            } else {
                4
            };
            config_for(a, Some(dim))
                .and_then(|cfg| cmd_flow(&cfg, &out_dir(a, &cfg), stdout).map(|_| ()))
        }
        Command::Check { level } => cmd_check(*level, stdout),
        Command::Symbol { samples } => cmd_symbol(*samples, stdout),
        Command::Describe(a) => config_for(a, None).and_then(|cfg| cmd_describe(&cfg, stdout)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
