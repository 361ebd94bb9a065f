use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ntk_spectrum_cli::{run, CliError, ExperimentConfig, Overrides, Report, Suite};

#[derive(Parser)]
#[command(
    name = "ntkspec",
    version,
    about = "Numerical checks of the ReLU NTK spectrum"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Kernel series against Monte Carlo and finite-width kernels, traces.
    KernelCheck,
    /// Orthonormality, eigenvalues and eigenfunction checks.
    Spectrum,
    /// Fisher matrix clusters, KL and isometry identities.
    Fisher,
    /// Projection onto the explicit modes and residual bounds.
    Approx,
    /// Mode-wise gradient flow.
    Flow,
    /// Every suite in order.
    All,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
    Both,
}

#[derive(clap::Args)]
struct Opts {
    /// Input dimension for every suite.
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Hidden width for every suite that samples a network.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo sample count for every integral.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// JSON config, or a stored report whose config is reused.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; the report goes to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

fn suites(c: Command) -> Vec<Suite> {
    match c {
        Command::KernelCheck => vec![Suite::Kernel],
        Command::Spectrum => vec![Suite::Spectrum],
        Command::Fisher => vec![Suite::Fisher],
        Command::Approx => vec![Suite::Approx],
        Command::Flow => vec![Suite::Flow],
        Command::All => Suite::ALL.to_vec(),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(report: &Report, out: Option<&Path>, format: Format) -> Result<(), CliError> {
    let json = matches!(format, Format::Json | Format::Both);
    let csv = matches!(format, Format::Csv | Format::Both);
    match out {
        None => {
            if json {
                println!("{}", report.to_json()?);
            }
            if csv {
                print!("{}", report.csv_string()?);
            }
        }
        Some(path) => {
            if format == Format::Both {
                write(&path.with_extension("json"), &report.to_json()?)?;
                write(&path.with_extension("csv"), &report.csv_string()?)?;
            } else if json {
                write(path, &report.to_json()?)?;
            } else {
                write(path, &report.csv_string()?)?;
            }
        }
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<Report, CliError> {
    let o = &cli.opts;
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        d: o.d,
        m: o.m,
        seed: o.seed,
        samples: o.samples,
    });
    let report = run(&suites(cli.command), &cfg, o.jobs)?;
    emit(&report, o.out.as_deref(), o.format)?;
    Ok(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(report) => {
            for s in &report.suites {
                let failed = s.checks.iter().filter(|c| !c.passed).count();
                eprintln!(
                    "{:<9} {} checks, {} failed",
                    s.suite,
                    s.checks.len(),
                    failed
                );
                for c in s.checks.iter().filter(|c| !c.passed) {
                    eprintln!(
                        "  FAIL {}: estimate {} target {}",
                        c.name, c.estimate, c.target
                    );
                }
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
