//! Command-line entry point for gauge-network experiments.
//!
//! Exit status: 0 on success (and when every `verify` check passes), 1 when
//! a run or verification fails, 2 on configuration or usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qgn_cli::config::{load_config, ExperimentConfig, Overrides};
use qgn_cli::convert::convert;
use qgn_cli::run::run;
use qgn_cli::verify::verify;

#[derive(Parser)]
#[command(name = "qgn", version, about = "Simulate gauge networks of truncated wavefunctions")]
struct Cli {
    /// BLAS thread count; overrides the QGN_THREADS environment variable
    /// (default 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct OverrideArgs {
    /// Integrator time step override.
    #[arg(long)]
    dt: Option<f64>,
    /// Target patch dimension override.
    #[arg(long)]
    chi: Option<usize>,
    /// Total evolution time override.
    #[arg(long)]
    time: Option<f64>,
    /// Reference mode override: dense, krylov, free-fermion, or none.
    #[arg(long)]
    oracle: Option<String>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the experiment in a config file and write CSV plus report.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Output CSV path override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant battery for a config; exit 0 only if all checks pass.
    Verify {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Convert an MPS container into a network container.
    ConvertMps { input: PathBuf, output: PathBuf },
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("QGN_THREADS").ok().and_then(|s| s.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn load(config: &PathBuf, overrides: &OverrideArgs, out: Option<PathBuf>) -> Option<ExperimentConfig> {
    let ov = Overrides {
        dt: overrides.dt,
        chi: overrides.chi,
        time: overrides.time,
        oracle: overrides.oracle.clone(),
        out,
        seed: overrides.seed,
    };
    match load_config(config, &ov) {
        Ok(cfg) => Some(cfg),
        Err(err) => {
            eprintln!("config error: {err:#}");
            None
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    qgn_core::linalg::set_blas_threads(thread_count(cli.threads));

    match cli.command {
        Command::Run { config, overrides, out } => {
            let Some(cfg) = load(&config, &overrides, out) else {
                return ExitCode::from(2);
            };
            match run(&cfg) {
                Ok(artifacts) => {
                    print!("{}", artifacts.report);
                    ExitCode::SUCCESS
                }
                Err(err) => {
                    eprintln!("run failed: {err:#}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Verify { config, overrides } => {
            let Some(cfg) = load(&config, &overrides, None) else {
                return ExitCode::from(2);
            };
            match verify(&cfg) {
                Ok(true) => {
                    println!("all checks passed");
                    ExitCode::SUCCESS
                }
                Ok(false) => {
                    eprintln!("verification failed");
                    ExitCode::from(1)
                }
                Err(err) => {
                    eprintln!("verify error: {err:#}");
                    ExitCode::from(2)
                }
            }
        }
        Command::ConvertMps { input, output } => match convert(&input, &output) {
            Ok(()) => ExitCode::SUCCESS,
            Err(err) => {
                eprintln!("conversion failed: {err:#}");
                ExitCode::from(1)
            }
        },
    }
}
