//! Experiment runner for the `ntk-spectrum` verification suites.
//!
//! Every subcommand produces a [`Report`]: one record per check with target,
//! estimate, standard error, tolerance and verdict, plus the configuration
//! that reproduces it.

pub mod config;
pub mod report;
pub mod suites;

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

pub use config::{ExperimentConfig, Overrides};
pub use report::{Check, Metadata, Report, Rule, SuiteReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Compute(#[from] ntk_spectrum::Error),
}

impl CliError {
    /// Process exit status; distinct from the suite bitmask of failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 64,
            CliError::Io(_) => 74,
            CliError::Compute(_) => 70,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Kernel,
    Spectrum,
    Fisher,
    Approx,
    Flow,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Kernel,
        Suite::Spectrum,
        Suite::Fisher,
        Suite::Approx,
        Suite::Flow,
    ];

    pub fn run(self, cfg: &ExperimentConfig) -> Result<SuiteReport, CliError> {
        match self {
            Suite::Kernel => suites::run_kernel_check(cfg),
            Suite::Spectrum => suites::run_spectrum(cfg),
            Suite::Fisher => suites::run_fisher(cfg),
            Suite::Approx => suites::run_approx(cfg),
            Suite::Flow => suites::run_flow(cfg),
        }
    }
}

/// Validates `cfg`, runs the suites in order on a pool of `jobs` threads
/// (all available cores when `None`) and assembles the report.
pub fn run(
    suites: &[Suite],
    cfg: &ExperimentConfig,
    jobs: Option<usize>,
) -> Result<Report, CliError> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|t| t.as_secs())
        .unwrap_or(0);
    let start = Instant::now();
    let results = pool.install(|| {
        suites
            .iter()
            .map(|s| s.run(cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(Report {
        metadata: Metadata {
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config: cfg.clone(),
            timestamp,
            runtime_secs: start.elapsed().as_secs_f64(),
        },
        suites: results,
    })
}
