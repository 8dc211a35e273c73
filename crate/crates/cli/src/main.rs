//! `root-barrier`: solve for a Root barrier, verify it by simulation, or
//! bound a variance option from a call chain.
//!
//! Exit codes: 0 success, 2 config error, 3 solver error, 4 verification
//! above threshold, 5 arbitrage in the market data.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::{Failure, PriceArgs};
use root_barrier::pricing::McParams;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "root-barrier", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the obstacle problem and extract the barrier.
    Solve {
        config: PathBuf,
        /// Overrides the config's `outputs` directory.
        #[arg(long)]
        outputs: Option<PathBuf>,
    },
    /// Embed the target by simulation against a barrier and report the fit.
    Verify {
        config: PathBuf,
        /// Defaults to `barrier.csv` in the outputs directory.
        #[arg(long)]
        barrier: Option<PathBuf>,
        #[arg(long)]
        outputs: Option<PathBuf>,
    },
    /// Model-independent lower bound for a variance option.
    Price {
        /// `strike,price` CSV of call prices.
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        maturity: f64,
        #[arg(long)]
        forward: f64,
        /// `identity`, `call(k)` or `affine(s,i;s,i;...)`.
        #[arg(long)]
        payoff: String,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        /// Business-time horizon of the simulation.
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving `price_barrier.csv`.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("ROOT_BARRIER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("ROOT_BARRIER_THREADS = '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match cli.command {
        Command::Solve { config, outputs } => commands::solve(&config, outputs.as_deref()),
        Command::Verify {
            config,
            barrier,
            outputs,
        } => commands::verify(&config, barrier.as_deref(), outputs.as_deref()),
        Command::Price {
            market,
            maturity,
            forward,
            payoff,
            paths,
            dt,
            t_max,
            seed,
            out_dir,
        } => commands::price(&PriceArgs {
            market,
            maturity,
            forward,
            payoff,
            mc: McParams {
                n_paths: paths,
                dt,
                t_max,
                seed,
            },
            out_dir,
        }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
