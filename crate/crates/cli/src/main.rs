mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, Context};
use config::RunConfig;

/// Principal Koopman eigenfunctions of SDEs by RBF collocation and
/// Feynman–Kac Monte Carlo.
#[derive(Parser)]
#[command(name = "koopman-sde", version)]
struct Cli {
    /// JSON run configuration (see `<command> --help` for keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collocation solve: solution.json, report.csv, eigenfunction_curve.csv.
    #[command(after_help = config::keys_help())]
    Solve,
    /// Feynman–Kac estimates at query points (fk_estimates.csv); with --fit,
    /// a kernel ridge fit of node estimates (fk_nodes.csv, solution.json).
    #[command(after_help = config::keys_help())]
    Fk {
        /// CSV file with one query point per line.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Estimate h at the collocation nodes and fit a kernel expansion.
        #[arg(long)]
        fit: bool,
    },
    /// Rerun the benchmark tables (summary.csv) and check acceptance bands.
    #[command(after_help = config::keys_help())]
    Reproduce {
        /// all, test1, test2 or test3.
        which: String,
    },
    /// Semigroup relative error over a list of horizons (semigroup_curve.csv).
    #[command(after_help = config::keys_help())]
    SemigroupCurve {
        /// Comma-separated, positive and increasing.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
        times: Vec<f64>,
    },
    /// Conditioning sweep over noise levels on the quadratic model (sweep.csv).
    #[command(after_help = config::keys_help())]
    Sweep {
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.5")]
        sigmas: Vec<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot start thread pool: {e}")))?;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let ctx = Context { cfg, out };
    match &cli.command {
        Command::Solve => commands::solve(&ctx),
        Command::Fk { queries, fit } => commands::fk(&ctx, queries.as_deref(), *fit),
        Command::Reproduce { which } => commands::reproduce(&ctx, which),
        Command::SemigroupCurve { times } => commands::semigroup_curve(&ctx, times),
        Command::Sweep { sigmas } => commands::sweep(&ctx, sigmas),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
