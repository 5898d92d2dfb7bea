//! Configuration, experiment orchestration and report files for
//! `rspde-core`, plus the `rspde` command line.

pub mod config;
pub mod experiments;
pub mod output;
pub mod registry;

use std::path::{Path, PathBuf};

use config::{ConfigError, Experiment, RunConfig};
use experiments::{Outcome, Prepared};
use output::Header;

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const ASSUMPTIONS: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    pub const ACCEPTANCE: i32 = 5;
}

/// Worker count for the rayon pool.
pub const WORKERS_ENV: &str = "RSPDE_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("assumption check failed: {0}")]
    Assumptions(String),
    #[error("numerical failure: {0}")]
    Numerical(rspde_core::Error),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn from_core(e: rspde_core::Error) -> Self {
        match e {
            rspde_core::Error::Assumptions(msg) => RunError::Assumptions(msg),
            e if e.is_numerical() => RunError::Numerical(e),
            e => RunError::Config(ConfigError::Core(e)),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(ConfigError::Core(e)) if e.is_numerical() => exit::NUMERICAL,
            RunError::Config(_) | RunError::Io(_) => exit::CONFIG,
            RunError::Assumptions(_) => exit::ASSUMPTIONS,
            RunError::Numerical(_) => exit::NUMERICAL,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub ns: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub output: Option<PathBuf>,
    pub kappa: Option<f64>,
    /// `(nodes, steps)`.
    pub grid: Option<(usize, usize)>,
}

impl Overrides {
    pub fn apply(&self, run: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(e) = self.experiment {
            run.experiment = Some(e);
        }
        if let Some(ns) = &self.ns {
            run.ns = ns.clone();
        }
        if let Some(seeds) = &self.seeds {
            run.seeds = seeds.clone();
        }
        if let Some(out) = &self.output {
            run.output = Some(out.clone());
        }
        if let Some(k) = self.kappa {
            run.kappa = Some(k);
        }
        if let Some((nodes, steps)) = self.grid {
            run.problem.grid.nodes = nodes;
            run.problem.grid.steps = steps;
        }
        run.check()
    }
}

/// Parses `MxN` into `(nodes, steps)`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (m, n) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected MxN, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(m)?, parse(n)?))
}

#[derive(Debug)]
pub struct Report {
    pub header: Header,
    pub outcome: Outcome,
    pub output: PathBuf,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.outcome.passed() {
            exit::PASS
        } else {
            exit::ACCEPTANCE
        }
    }

    pub fn summary(&self) -> String {
        output::summary(&self.header, &self.outcome.checks, &self.outcome.notes)
    }
}

/// The output directory is left out of the embedded config: it does not
/// affect results, and copies of a run should compare equal.
pub fn header(run: &RunConfig, experiment: Experiment, kappa: f64) -> Header {
    let g = &run.problem.grid;
    let mut embedded = run.clone();
    embedded.output = None;
    embedded.experiment = Some(experiment);
    Header {
        experiment: experiment.name().into(),
        config: serde_json::to_value(&embedded).expect("config serializes"),
        seeds: run.seeds.clone(),
        kappa,
        grid: format!(
            "d={} L={} M={} N={} T={}",
            run.problem.d,
            g.half_width,
            g.nodes,
            g.steps,
            run.problem.horizon
        ),
        generator: rspde_core::paths::GENERATOR_ID,
        version: output::VERSION,
    }
}

/// Validates, runs the experiment and, when `write` is set, writes every
/// artifact into the output directory. Nothing is written if the config
/// or the assumption gate rejects the run.
pub fn run(mut run: RunConfig, overrides: &Overrides, write: bool) -> Result<Report, RunError> {
    overrides.apply(&mut run)?;
    let experiment = run
        .experiment
        .ok_or_else(|| ConfigError::Invalid("no experiment given in the config or on the command line".into()))?;
    let output = run.output.clone().unwrap_or_else(|| PathBuf::from("rspde-out"));
    let prep = Prepared::new(run, experiment)?;
    let outcome = experiments::execute(&prep)?;
    let header = header(&prep.run, experiment, outcome.kappa);
    if write {
        output::write_all(&output, &header, &outcome.tables, &outcome.checks, &outcome.notes)?;
    }
    Ok(Report {
        header,
        outcome,
        output,
    })
}

pub fn load_and_run(path: &Path, overrides: &Overrides, write: bool) -> Result<Report, RunError> {
    run(RunConfig::load(path)?, overrides, write)
}

/// A pool sized by `RSPDE_WORKERS`, or rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool, ConfigError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| ConfigError::Invalid(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| ConfigError::Invalid(format!("cannot start worker pool: {e}")))
}
