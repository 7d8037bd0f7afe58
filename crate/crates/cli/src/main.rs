use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use heavyfpca_cli::run::{dispatch, Command};
use heavyfpca_cli::CliError;

#[derive(Parser)]
#[command(
    name = "heavyfpca",
    version,
    about = "FPCA and tail diagnostics for heavy-tailed curves"
)]
struct Cli {
    /// Worker threads for replicate-parallel experiments.
    #[arg(long, global = true, env = "HEAVYFPCA_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Config file, TOML or JSON.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Exit with status 5 when an acceptance check fails.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Eigenvalues, eigenfunctions and scores of a curve panel.
    Fpca(RunArgs),
    /// Hill plots of the leading FPC scores.
    Hill(RunArgs),
    /// Draw curves from a regularly varying model.
    Simulate(RunArgs),
    /// Convergence-rate experiment for the covariance and its eigenpairs.
    Rate(RunArgs),
    /// Tails and centering of the normalized covariance error.
    StableLimit(RunArgs),
    /// Consistency experiment for the functional regression estimator.
    Flr(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let (cmd, args) = match cli.command {
        Cmd::Fpca(a) => (Command::Fpca, a),
        Cmd::Hill(a) => (Command::Hill, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Rate(a) => (Command::Rate, a),
        Cmd::StableLimit(a) => (Command::StableLimit, a),
        Cmd::Flr(a) => (Command::Flr, a),
    };
    let result = configure_threads(cli.threads).and_then(|_| dispatch(cmd, &args.config, &args.out, args.check));
    match result {
        Ok(checks) => {
            for c in checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("heavyfpca {}: {e}", cmd.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}
