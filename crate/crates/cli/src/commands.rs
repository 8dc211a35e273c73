use crate::config::RunConfig;
use root_barrier::barrier::{extract_barrier, Provenance, RootBarrier};
use root_barrier::embed_mc::{simulate_embedding, SdeConfig};
use root_barrier::measures::{read_market_csv, MeasureError};
use root_barrier::obstacle_pde::{solve_obstacle, SolveOptions};
use root_barrier::pricing::{
    ingest_market, variance_bound_lower, McParams, Payoff, PricingError, PricingGrid,
};
use serde_json::json;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// A failed command; the variant fixes the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
    Threshold(String),
    Arbitrage(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Threshold(_) => 4,
            Failure::Arbitrage(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Solver(m) => write!(f, "solver error: {m}"),
            Failure::Threshold(m) => write!(f, "verification failed: {m}"),
            Failure::Arbitrage(m) => write!(f, "market data error: {m}"),
        }
    }
}

fn solver(e: impl fmt::Display) -> Failure {
    Failure::Solver(e.to_string())
}

fn output_dir(configured: &Path, requested: Option<&Path>) -> Result<PathBuf, Failure> {
    let dir = requested.unwrap_or(configured).to_path_buf();
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::Config(format!("outputs {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Writes `solution.csv`, `barrier.csv` and `meta.json`.
pub fn solve(config: &Path, outputs: Option<&Path>) -> Result<(), Failure> {
    let loaded = RunConfig::load(config).map_err(Failure::Config)?;
    let grid = loaded.grid().map_err(Failure::Config)?;
    let dir = output_dir(&loaded.config.outputs, outputs)?;
    let opts = SolveOptions {
        store_every: grid.n_t.div_ceil(loaded.config.grid.rows - 1).max(1),
        ..SolveOptions::default()
    };
    let sol =
        solve_obstacle(&loaded.sigma, &loaded.mu, &loaded.nu, &grid, &opts).map_err(solver)?;
    let barrier = extract_barrier(&sol, &loaded.nu, None).map_err(solver)?;
    sol.write_csv(dir.join("solution.csv"), 1).map_err(solver)?;
    barrier.write_csv(dir.join("barrier.csv")).map_err(solver)?;
    sol.write_meta(dir.join("meta.json")).map_err(solver)?;
    println!(
        "solved on {} x {} nodes, wrote {}",
        grid.n_x + 2,
        grid.n_t + 1,
        dir.display()
    );
    Ok(())
}

/// Simulates the embedding and writes `report.json`.
pub fn verify(
    config: &Path,
    barrier: Option<&Path>,
    outputs: Option<&Path>,
) -> Result<(), Failure> {
    let loaded = RunConfig::load(config).map_err(Failure::Config)?;
    let grid = loaded.grid().map_err(Failure::Config)?;
    let dir = output_dir(&loaded.config.outputs, outputs)?;
    let barrier_path = barrier.map_or_else(|| dir.join("barrier.csv"), Path::to_path_buf);
    let b = RootBarrier::read_csv(&barrier_path, Provenance::FromPde)
        .map_err(|e| Failure::Config(format!("barrier {}: {e}", barrier_path.display())))?;
    let mc = &loaded.config.mc;
    let cfg = SdeConfig::new(
        loaded.sigma.clone(),
        loaded.mu.clone(),
        mc.dt,
        mc.t_max,
        mc.n_paths,
        mc.seed,
    );
    let report = simulate_embedding(&cfg, &b)
        .map_err(solver)?
        .with_target(&loaded.nu, &grid.xs());
    let threshold = loaded.config.verify.threshold;
    let passed = report.potential_distance.is_some_and(|d| d <= threshold);
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let doc = json!({
        "timestamp": timestamp,
        "barrier": barrier_path,
        "threshold": threshold,
        "passed": passed,
        "report": report,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(solver)?;
    std::fs::write(dir.join("report.json"), text + "\n").map_err(solver)?;
    let summary = format!(
        "potential distance {}, unstopped fraction {}",
        report
            .potential_distance
            .map_or("n/a".to_string(), |d| format!("{d:.5}")),
        report.unstopped_fraction
    );
    if passed {
        println!("{summary}");
        Ok(())
    } else {
        Err(Failure::Threshold(format!(
            "{summary}, threshold {threshold}"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct PriceArgs {
    pub market: PathBuf,
    pub maturity: f64,
    pub forward: f64,
    pub payoff: String,
    pub mc: McParams,
    pub out_dir: PathBuf,
}

fn pricing_failure(e: PricingError) -> Failure {
    match e {
        PricingError::Measure(MeasureError::ArbitrageDetected { .. }) => {
            Failure::Arbitrage(e.to_string())
        }
        PricingError::Measure(MeasureError::MarketData(_)) | PricingError::InvalidPayoff(_) => {
            Failure::Config(e.to_string())
        }
        _ => solver(e),
    }
}

/// Lower bound on `E[f([ln S]_T)]` from a call chain, as JSON on stdout.
pub fn price(args: &PriceArgs) -> Result<(), Failure> {
    let quotes = read_market_csv(&args.market).map_err(|e| Failure::Config(e.to_string()))?;
    let payoff: Payoff = args
        .payoff
        .parse()
        .map_err(|e: PricingError| Failure::Config(e.to_string()))?;
    let spec =
        ingest_market(&quotes, args.maturity, args.forward, payoff).map_err(pricing_failure)?;
    let bound = variance_bound_lower(&spec, &PricingGrid::for_target(&spec.nu), &args.mc)
        .map_err(pricing_failure)?;
    let dir = output_dir(&args.out_dir, None)?;
    let barrier_path = dir.join("price_barrier.csv");
    bound.barrier.write_csv(&barrier_path).map_err(solver)?;
    let doc = json!({
        "bound": bound.bound,
        "stderr": bound.stderr,
        "barrier_csv_path": barrier_path,
        "n_paths": bound.n_paths,
        "grid": bound.grid,
    });
    println!("{}", serde_json::to_string_pretty(&doc).map_err(solver)?);
    Ok(())
}
