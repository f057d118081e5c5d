//! Experiment runner: loads a JSON configuration, runs the selected
//! experiments and writes their CSV tables plus `summary.csv`.

pub mod checks;
pub mod config;
pub mod experiments;

use std::fs;
use std::path::PathBuf;

use anyhow::Context;

use checks::{exit_status, summary_table, Check};
use config::ExperimentConfig;
use experiments::{run_experiment, ExperimentOutput};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum RunError {
    /// Unparseable or out-of-range configuration, unknown model.
    Config(anyhow::Error),
    /// Numerical failure or unwritable output.
    Runtime(anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Self::Config(e) | Self::Runtime(e) => e,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error())
    }
}

impl std::error::Error for RunError {}

#[derive(Debug)]
pub struct RunReport {
    pub checks: Vec<Check>,
    /// Written files, in write order; `summary.csv` is last.
    pub files: Vec<PathBuf>,
    pub exit_code: i32,
}

/// Comment line heading every CSV.
pub fn provenance(cfg: &ExperimentConfig) -> String {
    format!("jumpreg {VERSION} config_sha256={} seed={}", cfg.hash(), cfg.seed)
}

/// Runs every selected experiment in order and collects checks and tables.
pub fn compute(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutput> {
    let mut all = ExperimentOutput::default();
    for kind in cfg.experiment.expand() {
        let out = run_experiment(kind, cfg)?;
        all.checks.extend(out.checks);
        all.tables.extend(out.tables);
    }
    Ok(all)
}

/// Validates, computes, then writes all tables. Nothing is written unless the
/// configuration is valid and every experiment completed.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, RunError> {
    cfg.validate().map_err(RunError::Config)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(RunError::Runtime)?;
    let ExperimentOutput { checks, tables } = compute(cfg).map_err(RunError::Runtime)?;

    let comment = provenance(cfg);
    let summary = summary_table(&checks);
    let exit_code = exit_status(&summary);
    let mut files = Vec::with_capacity(tables.len() + 1);
    for (name, table) in tables.iter().chain(std::iter::once(&("summary.csv".to_string(), summary))) {
        let path = dir.join(name);
        fs::write(&path, table.to_csv_string(Some(&comment)))
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(RunError::Runtime)?;
        files.push(path);
    }
    Ok(RunReport {
        checks,
        files,
        exit_code,
    })
}

/// [`run`] on a dedicated pool of `workers` threads; `None` uses rayon's default.
pub fn run_with_workers(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunReport, RunError> {
    match workers {
        None => run(cfg),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("cannot start worker pool")
                .map_err(RunError::Runtime)?;
            pool.install(|| run(cfg))
        }
    }
}
