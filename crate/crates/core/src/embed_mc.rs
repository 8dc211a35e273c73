//! Monte Carlo verification of Root embeddings and a direct solver for
//! barriers with finitely supported targets.
//!
//! Paths are simulated with Euler–Maruyama (or exactly in log space for
//! `σ(x) = x`) and stopped at the first entrance into the barrier, checked
//! per step through [`RootBarrier::segment_hit`]. Path `i` draws from its own
//! ChaCha8 stream `i` under the configured seed, so results are independent
//! of thread count.

use crate::barrier::{Interpolation, Provenance, RootBarrier};
use crate::measures::{convex_order_check, default_contact_tol, ConvexOrder, ProbabilityMeasure};
use crate::sigma::Sigma;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("EmptySample: no stopped paths to compare")]
    EmptySample,
    #[error("TooManyUnstopped: unstopped fraction {0} is not below 0.01")]
    TooManyUnstopped(f64),
    #[error("NoConvergence: masses still off after {sweeps} sweeps (worst error {worst})")]
    NoConvergence { sweeps: usize, worst: f64 },
    #[error("OrderViolation: {0}")]
    OrderViolation(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Barrier(#[from] crate::barrier::BarrierError),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("Io: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Stepping {
    /// `X ← X + σ(t, X) √dt Z`.
    #[default]
    Euler,
    /// `ln X ← ln X - a²dt/2 + a √dt Z` with `a = σ(t, X)/X`; exact for
    /// `σ(x) = x`. Requires a positive state.
    LogEuler,
}

#[derive(Debug, Clone)]
pub struct SdeConfig {
    pub sigma: Sigma,
    pub initial: ProbabilityMeasure,
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub stepping: Stepping,
}

impl SdeConfig {
    pub fn new(
        sigma: Sigma,
        initial: ProbabilityMeasure,
        dt: f64,
        t_max: f64,
        n_paths: usize,
        seed: u64,
    ) -> Self {
        Self {
            sigma,
            initial,
            dt,
            t_max,
            n_paths,
            seed,
            stepping: Stepping::Euler,
        }
    }

    pub fn with_stepping(mut self, stepping: Stepping) -> Self {
        self.stepping = stepping;
        self
    }

    fn validate(&self) -> Result<(), EmbedError> {
        if !(self.dt > 0.0) || !(self.t_max >= self.dt) || self.n_paths == 0 {
            return Err(EmbedError::InvalidConfig(format!(
                "dt = {}, t_max = {}, n_paths = {}",
                self.dt, self.t_max, self.n_paths
            )));
        }
        Ok(())
    }

    fn n_steps(&self) -> usize {
        (self.t_max / self.dt - 1e-9).ceil() as usize
    }
}

/// Stopped-path samples plus summary statistics. Sample arrays hold the
/// stopped paths only and are parallel.
#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingReport {
    #[serde(skip)]
    pub tau_samples: Vec<f64>,
    #[serde(skip)]
    pub x_samples: Vec<f64>,
    /// Realized `Σ (ΔX)²` up to the stop.
    #[serde(skip)]
    pub qv_samples: Vec<f64>,
    /// Realized `Σ (Δ ln X)²`; empty unless log stepping was used.
    #[serde(skip)]
    pub log_qv_samples: Vec<f64>,
    pub n_paths: usize,
    pub n_stopped: usize,
    pub unstopped_fraction: f64,
    pub potential_distance: Option<f64>,
    pub mean_tau: f64,
    pub second_moment_tau: f64,
    pub mean_x: f64,
}

impl EmbeddingReport {
    /// Sets `potential_distance` against `nu` on `grid`.
    pub fn with_target(mut self, nu: &ProbabilityMeasure, grid: &[f64]) -> Self {
        self.potential_distance = embedding_distance(&self.x_samples, nu, grid).ok();
        self
    }

    /// `tau,x` dump of the stopped samples.
    pub fn write_samples_csv(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tau", "x"])?;
        for (t, x) in self.tau_samples.iter().zip(&self.x_samples) {
            w.write_record([t.to_string(), x.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of one simulated path.
#[derive(Debug, Clone, Copy)]
struct PathOutcome {
    stopped: bool,
    tau: f64,
    x: f64,
    qv: f64,
    log_qv: f64,
    /// Latest crossing time of the watched column before the stop.
    watch_last: f64,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn simulate_path(
    cfg: &SdeConfig,
    barrier: &RootBarrier,
    n_steps: usize,
    path: usize,
    watch: Option<f64>,
) -> PathOutcome {
    let mut rng = path_rng(cfg.seed, path);
    let x0 = cfg.initial.sample(&mut rng);
    let mut watch_last = f64::NEG_INFINITY;
    if watch == Some(x0) {
        watch_last = 0.0;
    }
    let mut out = PathOutcome {
        stopped: true,
        tau: 0.0,
        x: x0,
        qv: 0.0,
        log_qv: 0.0,
        watch_last,
    };
    if barrier.contains(0.0, x0) {
        return out;
    }
    let mut x = x0;
    let mut lx = if cfg.stepping == Stepping::LogEuler {
        x0.ln()
    } else {
        0.0
    };
    let mut t = 0.0;
    let sqdt = cfg.dt.sqrt();
    let mut cell = barrier.cell_of(x0);
    for k in 1..=n_steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        let t1 = if k == n_steps {
            cfg.t_max
        } else {
            k as f64 * cfg.dt
        };
        let h = t1 - t;
        let sqh = if k == n_steps { h.sqrt() } else { sqdt };
        let (x1, lx1) = match cfg.stepping {
            Stepping::Euler => (x + cfg.sigma.eval(t, x) * sqh * z, 0.0),
            Stepping::LogEuler => {
                let a = cfg.sigma.eval(t, x) / x;
                let lx1 = lx - 0.5 * a * a * h + a * sqh * z;
                (lx1.exp(), lx1)
            }
        };
        let hit = barrier.step(&mut cell, t, x, t1, x1);
        if let Some(w) = watch {
            if (x < w && w <= x1) || (x1 <= w && w < x) {
                let s = t + h * (w - x) / (x1 - x);
                // Crossings after a stop in the same segment do not count.
                if hit.is_none_or(|hit| hit.t >= s) {
                    out.watch_last = s;
                }
            }
        }
        if let Some(hit) = hit {
            let dx = hit.x - x;
            out.qv += dx * dx;
            if cfg.stepping == Stepping::LogEuler {
                let dl = hit.x.ln() - lx;
                out.log_qv += dl * dl;
            }
            out.tau = hit.t;
            out.x = hit.x;
            return out;
        }
        let dx = x1 - x;
        out.qv += dx * dx;
        if cfg.stepping == Stepping::LogEuler {
            let dl = lx1 - lx;
            out.log_qv += dl * dl;
        }
        x = x1;
        lx = lx1;
        t = t1;
    }
    out.stopped = false;
    out.tau = cfg.t_max;
    out.x = x;
    out
}

fn run_paths(cfg: &SdeConfig, barrier: &RootBarrier, watch: Option<f64>) -> Vec<PathOutcome> {
    let n_steps = cfg.n_steps();
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| simulate_path(cfg, barrier, n_steps, p, watch))
        .collect()
}

fn summarize(cfg: &SdeConfig, outcomes: &[PathOutcome]) -> EmbeddingReport {
    let stopped: Vec<&PathOutcome> = outcomes.iter().filter(|o| o.stopped).collect();
    let n = stopped.len();
    let mean = |f: &dyn Fn(&PathOutcome) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            stopped.iter().map(|o| f(o)).sum::<f64>() / n as f64
        }
    };
    EmbeddingReport {
        tau_samples: stopped.iter().map(|o| o.tau).collect(),
        x_samples: stopped.iter().map(|o| o.x).collect(),
        qv_samples: stopped.iter().map(|o| o.qv).collect(),
        log_qv_samples: if cfg.stepping == Stepping::LogEuler {
            stopped.iter().map(|o| o.log_qv).collect()
        } else {
            Vec::new()
        },
        n_paths: outcomes.len(),
        n_stopped: n,
        unstopped_fraction: (outcomes.len() - n) as f64 / outcomes.len() as f64,
        potential_distance: None,
        mean_tau: mean(&|o| o.tau),
        second_moment_tau: mean(&|o| o.tau * o.tau),
        mean_x: mean(&|o| o.x),
    }
}

/// Simulates `cfg.n_paths` paths and stops them at the barrier. Paths still
/// running at `t_max` are counted as unstopped and excluded from moments.
pub fn simulate_embedding(
    cfg: &SdeConfig,
    barrier: &RootBarrier,
) -> Result<EmbeddingReport, EmbedError> {
    cfg.validate()?;
    Ok(summarize(cfg, &run_paths(cfg, barrier, None)))
}

/// `sup_grid |u_emp - u_ν|` with `u_emp` the exact potential of the sample law.
pub fn embedding_distance(
    x_samples: &[f64],
    nu: &ProbabilityMeasure,
    grid: &[f64],
) -> Result<f64, EmbedError> {
    if x_samples.is_empty() {
        return Err(EmbedError::EmptySample);
    }
    let emp =
        ProbabilityMeasure::empirical(x_samples.to_vec()).map_err(|_| EmbedError::EmptySample)?;
    Ok(grid
        .iter()
        .map(|&x| (emp.potential(x) - nu.potential(x)).abs())
        .fold(0.0, f64::max))
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
        for x in xs {
            n += 1;
            s += x;
            s2 += x * x;
        }
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let m = s / n as f64;
        let var = if n > 1 {
            ((s2 - n as f64 * m * m) / (n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        Self {
            mean: m,
            stderr: (var / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppedMoments {
    pub tau: Estimate,
    pub tau_sq: Estimate,
    pub f_tau: Estimate,
}

/// `E[τ]`, `E[τ²]` and `E[f(τ)]` over the stopped paths.
pub fn stopped_moments(
    report: &EmbeddingReport,
    f: impl Fn(f64) -> f64,
) -> Result<StoppedMoments, EmbedError> {
    if !(report.unstopped_fraction < 0.01) {
        return Err(EmbedError::TooManyUnstopped(report.unstopped_fraction));
    }
    let taus = report.tau_samples.iter().copied();
    Ok(StoppedMoments {
        tau: Estimate::from_samples(taus.clone()),
        tau_sq: Estimate::from_samples(taus.clone().map(|t| t * t)),
        f_tau: Estimate::from_samples(taus.map(f)),
    })
}

#[derive(Debug, Clone)]
pub struct AtomicBarrierOptions {
    /// Paths per simulation.
    pub mc_budget: usize,
    pub dt: f64,
    pub t_max: f64,
    pub tol_mass: f64,
    pub max_sweeps: usize,
    pub seed: u64,
    /// Contact tolerance; `None` uses the relative default.
    pub contact_tol: Option<f64>,
}

impl Default for AtomicBarrierOptions {
    fn default() -> Self {
        Self {
            mc_budget: 100_000,
            dt: 1e-4,
            t_max: 20.0,
            tol_mass: 5e-3,
            max_sweeps: 20,
            seed: 0,
            contact_tol: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AtomicBarrier {
    pub barrier: RootBarrier,
    /// `(atom, barrier time)`; pinned atoms carry `0`.
    pub times: Vec<(f64, f64)>,
    /// Estimated `P[X_τ = atom]`, aligned with `times`.
    pub masses: Vec<f64>,
    pub free: Vec<bool>,
    pub sweeps: usize,
}

impl AtomicBarrier {
    pub fn time_at(&self, atom: f64) -> Option<f64> {
        self.times.iter().find(|(x, _)| *x == atom).map(|(_, b)| *b)
    }
}

struct Layout {
    xs: Vec<f64>,
    f: Vec<f64>,
    atom_col: Vec<usize>,
}

/// Columns: atoms and contact points, with a `+∞` column at the midpoint of
/// every gap that is not itself in contact.
fn layout(
    mu: &ProbabilityMeasure,
    nu_atoms: &[f64],
    contact: &[f64],
    tol: Option<f64>,
    nu: &ProbabilityMeasure,
) -> Layout {
    let mut cols: Vec<f64> = nu_atoms.iter().chain(contact).copied().collect();
    cols.sort_by(f64::total_cmp);
    cols.dedup();
    let in_contact = |x: f64| {
        let h = nu.potential(x);
        (mu.potential(x) - h).abs() <= tol.unwrap_or_else(|| default_contact_tol(h))
    };
    let mut xs = Vec::with_capacity(2 * cols.len());
    let mut f = Vec::with_capacity(2 * cols.len());
    for (k, &c) in cols.iter().enumerate() {
        if k > 0 {
            let prev = cols[k - 1];
            let mid = 0.5 * (prev + c);
            let both_zero = f.last() == Some(&0.0) && in_contact(c);
            if !(both_zero && in_contact(mid)) {
                xs.push(mid);
                f.push(f64::INFINITY);
            }
        }
        xs.push(c);
        f.push(if in_contact(c) { 0.0 } else { f64::INFINITY });
    }
    let atom_col = nu_atoms
        .iter()
        .map(|a| xs.iter().position(|x| x == a).unwrap())
        .collect();
    Layout { xs, f, atom_col }
}

fn masses_at(outcomes: &[PathOutcome], atoms: &[f64]) -> Vec<f64> {
    let n = outcomes.len() as f64;
    atoms
        .iter()
        .map(|&a| outcomes.iter().filter(|o| o.stopped && o.x == a).count() as f64 / n)
        .collect()
}

/// Barrier embedding an atomic `nu`. Atoms in the contact set are pinned to
/// `b = 0`. Each free atom in turn gets the barrier time whose simulated
/// stopped mass equals its target: with common random numbers the stopped
/// mass at atom `i` is `P[L_i ≥ b_i]`, `L_i` being the last crossing of
/// `x_i` before the stop when column `i` is switched off, so the matching
/// `b_i` is an order statistic of `L_i`. Sweeps repeat until every free
/// atom's mass is within `tol_mass`.
pub fn solve_atomic_barrier(
    sigma: &Sigma,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    contact: &[f64],
    opts: &AtomicBarrierOptions,
) -> Result<AtomicBarrier, EmbedError> {
    let atoms = nu
        .atoms()
        .ok_or_else(|| EmbedError::InvalidConfig("target must be atomic".into()))?;
    let grid: Vec<f64> = atoms.locations().iter().chain(contact).copied().collect();
    match convex_order_check(mu, nu, &grid) {
        Ok(ConvexOrder::Ordered) => {}
        Ok(ConvexOrder::NotOrdered { witness }) => {
            return Err(EmbedError::OrderViolation(format!(
                "u_mu < u_nu at {witness}"
            )))
        }
        Err(e) => return Err(EmbedError::OrderViolation(e.to_string())),
    }
    let locs = atoms.locations().to_vec();
    let targets = atoms.masses().to_vec();
    let mut lay = layout(mu, &locs, contact, opts.contact_tol, nu);
    let n = lay.xs.len();
    lay.f[0] = 0.0;
    lay.f[n - 1] = 0.0;
    let free: Vec<bool> = lay.atom_col.iter().map(|&c| lay.f[c] != 0.0).collect();
    let mut order: Vec<usize> = (0..locs.len()).filter(|&i| free[i]).collect();
    let gap = |x: f64| (mu.potential(x) - nu.potential(x)).abs();
    order.sort_by(|&i, &j| gap(locs[j]).total_cmp(&gap(locs[i])));
    // Free atoms start switched off.
    for &i in &order {
        lay.f[lay.atom_col[i]] = f64::INFINITY;
    }

    let cfg = SdeConfig::new(
        sigma.clone(),
        mu.clone(),
        opts.dt,
        opts.t_max,
        opts.mc_budget,
        opts.seed,
    );
    cfg.validate()?;
    let build = |f: &[f64]| -> Result<RootBarrier, EmbedError> {
        Ok(
            RootBarrier::new(lay.xs.clone(), f.to_vec(), Provenance::Direct)?
                .with_interpolation(Interpolation::Linear),
        )
    };

    let mut sweeps = 0;
    let mut masses;
    loop {
        let current = build(&lay.f)?;
        let outcomes = run_paths(&cfg, &current, None);
        masses = masses_at(&outcomes, &locs);
        let worst = order
            .iter()
            .map(|&i| (masses[i] - targets[i]).abs())
            .fold(0.0, f64::max);
        if worst <= opts.tol_mass {
            break;
        }
        if sweeps == opts.max_sweeps {
            return Err(EmbedError::NoConvergence { sweeps, worst });
        }
        sweeps += 1;
        for &i in &order {
            let col = lay.atom_col[i];
            let mut f_off = lay.f.clone();
            f_off[col] = f64::INFINITY;
            let off = build(&f_off)?;
            let outcomes = run_paths(&cfg, &off, Some(locs[i]));
            let mut last: Vec<f64> = outcomes.iter().map(|o| o.watch_last).collect();
            last.sort_by(|a, b| b.total_cmp(a));
            let k = ((targets[i] * outcomes.len() as f64).round() as usize).clamp(1, last.len());
            let hi = last[k - 1];
            let b = if !hi.is_finite() {
                0.0
            } else {
                let lo = if k < last.len() && last[k].is_finite() {
                    last[k]
                } else {
                    0.0
                };
                (0.5 * (hi + lo)).max(0.0)
            };
            lay.f[col] = b;
        }
    }
    let times = locs
        .iter()
        .zip(&lay.atom_col)
        .map(|(&x, &c)| (x, lay.f[c]))
        .collect();
    Ok(AtomicBarrier {
        barrier: build(&lay.f)?,
        times,
        masses,
        free,
        sweeps,
    })
}
