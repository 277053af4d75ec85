//! Batch front end for the solvers of `perron-core`.
//!
//! Every subcommand reads an [`ExperimentConfig`] and writes one CSV table
//! and one JSON summary. Exit codes: 0 when every assertion passes, 2 when
//! one fails, 3 on a solver failure and 4 on a configuration error.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentId};
use report::{Artifacts, Run, Summary};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "PERRON_LAB_THREADS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Output(_) => EXIT_CONFIG,
            LabError::Solver(_) => EXIT_SOLVER,
        }
    }

    pub(crate) fn solver(e: impl std::fmt::Display) -> Self {
        LabError::Solver(e.to_string())
    }

    pub(crate) fn config(e: impl std::fmt::Display) -> Self {
        LabError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "perron-lab", version, about = "Perron-method experiments for the weighted p-Laplacian")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `outputs.dir` of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    Wos,
    ClosedForm,
    BfObstacle,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dirichlet solve on the finest mesh level.
    Solve(Common),
    /// Obstacle solve on the finest mesh level.
    Obstacle(Common),
    /// Capacity estimates of the configured sets.
    Capacity(Common),
    /// Upper and lower Perron approximants for every mesh level.
    Perron(Common),
    /// Comparison against an independent reference.
    Oracle {
        kind: OracleKind,
        #[command(flatten)]
        common: Common,
    },
    /// One of the named experiments, chosen by the `experiment` field.
    Experiment(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve(c)
            | Command::Obstacle(c)
            | Command::Capacity(c)
            | Command::Perron(c)
            | Command::Experiment(c)
            | Command::Oracle { common: c, .. } => c,
        }
    }
}

/// Sizes the global thread pool from [`THREADS_VAR`]. Only the first call
/// in a process has an effect.
pub fn init_threads() -> Result<(), LabError> {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| LabError::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses the arguments, runs the command and writes its artifacts.
/// Returns the process exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("{e}");
        return e.exit_code();
    }
    run_command(&cli.command)
}

pub fn run_command(command: &Command) -> i32 {
    let common = command.common();
    let cfg = match ExperimentConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(cfg.outputs.dir.as_deref().unwrap_or(".")));
    let (label, mut run, result) = match command {
        Command::Solve(_) => named("solve", |r| commands::solve(&cfg, r), commands::NODE_HEADER),
        Command::Obstacle(_) => named("obstacle", |r| commands::obstacle(&cfg, r), commands::NODE_HEADER),
        Command::Capacity(_) => named("capacity", |r| commands::capacity(&cfg, r), commands::CAPACITY_HEADER),
        Command::Perron(_) => named("perron", |r| commands::perron(&cfg, r), commands::PERRON_HEADER),
        Command::Oracle { kind, .. } => {
            let (name, header) = commands::oracle_table(*kind);
            named(name, |r| commands::oracle(&cfg, *kind, r), header)
        }
        Command::Experiment(_) => match cfg.experiment {
            None => {
                let e = LabError::Config("the experiment subcommand needs an `experiment` field".into());
                eprintln!("{e}");
                return e.exit_code();
            }
            Some(id) => named(id.name(), |r| experiments::run_experiment(&cfg, id, r), experiments::header(id)),
        },
    };
    let code = match &result {
        Ok(()) if run.all_pass() => EXIT_PASS,
        Ok(()) => EXIT_ASSERTION,
        Err(e) => e.exit_code(),
    };
    if let Err(e) = &result {
        run.check("run completed", "solver: convergence", false, e.to_string());
    }
    let summary = Summary {
        command: label.to_string(),
        status: match code {
            EXIT_PASS => "pass",
            EXIT_ASSERTION => "assertion-failure",
            EXIT_SOLVER => "solver-failure",
            _ => "config-error",
        },
        exit_code: code,
        all_pass: code == EXIT_PASS,
        assertions: run.assertions.clone(),
        metrics: run.metrics.clone(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let artifacts = Artifacts::new(&dir, cfg.outputs.csv.as_deref(), cfg.outputs.summary.as_deref(), label);
    if let Err(e) = artifacts.write(&run, &summary) {
        eprintln!("{e}");
        return e.exit_code();
    }
    let failed = summary.assertions.iter().filter(|a| !a.pass).count();
    println!(
        "{label}: {} ({} assertions, {failed} failed) -> {}, {}",
        summary.status,
        summary.assertions.len(),
        artifacts.csv.display(),
        artifacts.summary.display()
    );
    if let Some(err) = &summary.error {
        eprintln!("{err}");
    }
    code
}

fn named(
    name: &'static str,
    body: impl FnOnce(&mut Run) -> Result<(), LabError>,
    header: &[&'static str],
) -> (&'static str, Run, Result<(), LabError>) {
    let mut run = Run::new(name, header);
    let result = body(&mut run);
    (name, run, result)
}
