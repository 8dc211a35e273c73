//! Model-independent lower bounds for options on realized variance.
//!
//! With `S_0 = 1` and the market law `ν` of `S_T`, the Root embedding of `ν`
//! into geometric Brownian motion `dX = X dB` gives a stopping time `τ_R`
//! with `[ln X]_{τ_R} = τ_R`. For convex nondecreasing `f` with `f(0) = 0`,
//! `E[f(τ_R)]` bounds `E[f([ln S]_T)]` from below over all continuous
//! martingale models consistent with `ν`, and the time-changed model
//! `S^R_t = X_{τ_R ∧ t/(T - t)}` attains it.

use crate::barrier::{extract_barrier, regularize, BarrierError, RootBarrier};
use crate::embed_mc::{
    embedding_distance, simulate_embedding, EmbedError, EmbeddingReport, Estimate, SdeConfig,
    Stepping,
};
use crate::measures::{
    breeden_litzenberger, contact_set, convex_order_check, linspace, ConvexOrder, MarketQuote,
    MeasureError, MeasureKind, ProbabilityMeasure,
};
use crate::obstacle_pde::{solve_obstacle, Grid, PdeError, SolveOptions};
use crate::sigma::Sigma;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use thiserror::Error;

/// Mass allowed below `ε` for laws with unbounded support.
pub const SUPPORT_TAIL: f64 = 1e-4;
/// Forward normalization tolerance on `mean(ν)`.
pub const FORWARD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("SupportViolation: mass {mass} below epsilon = {epsilon}")]
    SupportViolation { epsilon: f64, mass: f64 },
    #[error(
        "OrderViolation: delta_1 is not below the target in convex order (witness x = {witness})"
    )]
    OrderViolation { witness: f64 },
    #[error("InvalidPayoff: {0}")]
    InvalidPayoff(String),
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub slope: f64,
    pub intercept: f64,
}

/// `f(x) = max_i (slope_i x + intercept_i)`: convex, nondecreasing on
/// `[0, ∞)` (all slopes `≥ 0`) and `f(0) = 0` (largest intercept `0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Affine>", into = "Vec<Affine>")]
pub struct Payoff {
    pieces: Vec<Affine>,
}

impl Payoff {
    pub fn new(pieces: Vec<Affine>) -> Result<Self, PricingError> {
        if pieces.is_empty() {
            return Err(PricingError::InvalidPayoff("no affine pieces".into()));
        }
        for p in &pieces {
            if !(p.slope >= 0.0) || !p.slope.is_finite() || !p.intercept.is_finite() {
                return Err(PricingError::InvalidPayoff(format!(
                    "piece {p:?} must have a finite slope >= 0"
                )));
            }
        }
        let f0 = pieces
            .iter()
            .map(|p| p.intercept)
            .fold(f64::NEG_INFINITY, f64::max);
        if f0.abs() > 1e-12 {
            return Err(PricingError::InvalidPayoff(format!(
                "f(0) = {f0}, expected 0"
            )));
        }
        Ok(Self { pieces })
    }

    /// `(x - k)^+`.
    pub fn call(k: f64) -> Result<Self, PricingError> {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(PricingError::InvalidPayoff(format!(
                "strike {k} must be >= 0"
            )));
        }
        Self::new(vec![
            Affine {
                slope: 0.0,
                intercept: 0.0,
            },
            Affine {
                slope: 1.0,
                intercept: -k,
            },
        ])
    }

    pub fn identity() -> Self {
        Self {
            pieces: vec![Affine {
                slope: 1.0,
                intercept: 0.0,
            }],
        }
    }

    pub fn pieces(&self) -> &[Affine] {
        &self.pieces
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.slope * x + p.intercept)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<Affine>> for Payoff {
    type Error = PricingError;
    fn try_from(v: Vec<Affine>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Payoff> for Vec<Affine> {
    fn from(p: Payoff) -> Self {
        p.pieces
    }
}

impl FromStr for Payoff {
    type Err = PricingError;

    /// `identity`, `call(k)` or `affine(s1,i1;s2,i2;...)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || PricingError::InvalidPayoff(format!("cannot parse payoff {s:?}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        if s == "identity" {
            return Ok(Self::identity());
        }
        if let Some(k) = s.strip_prefix("call(").and_then(|r| r.strip_suffix(')')) {
            return Self::call(num(k)?);
        }
        if let Some(body) = s.strip_prefix("affine(").and_then(|r| r.strip_suffix(')')) {
            let pieces = body
                .split(';')
                .map(|p| {
                    let (a, b) = p.split_once(',').ok_or_else(bad)?;
                    Ok(Affine {
                        slope: num(a)?,
                        intercept: num(b)?,
                    })
                })
                .collect::<Result<_, PricingError>>()?;
            return Self::new(pieces);
        }
        Err(bad())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceOptionSpec {
    pub payoff: Payoff,
    pub maturity: f64,
    /// Law of `S_T / S_0`.
    pub nu: ProbabilityMeasure,
    pub epsilon: f64,
}

impl VarianceOptionSpec {
    pub fn new(
        payoff: Payoff,
        maturity: f64,
        nu: ProbabilityMeasure,
        epsilon: f64,
    ) -> Result<Self, PricingError> {
        let spec = Self {
            payoff,
            maturity,
            nu,
            epsilon,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), PricingError> {
        if !(self.maturity > 0.0) || !self.maturity.is_finite() {
            return Err(PricingError::InvalidSpec(format!(
                "maturity {}",
                self.maturity
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(PricingError::InvalidSpec(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        let mean = self.nu.mean();
        if (mean - 1.0).abs() > FORWARD_TOLERANCE {
            return Err(PricingError::InvalidSpec(format!(
                "target mean {mean}, expected the forward 1"
            )));
        }
        let below = mass_below(&self.nu, self.epsilon);
        let allowed = if self.nu.is_atomic() {
            0.0
        } else {
            SUPPORT_TAIL
        };
        if below > allowed {
            return Err(PricingError::SupportViolation {
                epsilon: self.epsilon,
                mass: below,
            });
        }
        Ok(())
    }
}

/// `ν((-∞, ε))`.
fn mass_below(nu: &ProbabilityMeasure, eps: f64) -> f64 {
    match nu.atoms() {
        Some(a) => a.iter().filter(|&(x, _)| x < eps).map(|(_, p)| p).sum(),
        None => nu.cdf(eps),
    }
}

/// `E[ln X]` under `ν`, when available in closed form. `-2 E[ln S_T]` is the
/// variance swap rate, i.e. `E[τ_R]`.
pub fn expected_log(nu: &ProbabilityMeasure) -> Option<f64> {
    match nu.kind() {
        MeasureKind::Atomic(a) | MeasureKind::Empirical { atoms: a, .. } => a
            .iter()
            .all(|(x, _)| x > 0.0)
            .then(|| a.iter().map(|(x, p)| p * x.ln()).sum()),
        MeasureKind::Lognormal { log_mean, .. } => Some(*log_mean),
        MeasureKind::Uniform { lo, hi } if *lo > 0.0 => {
            let g = |x: f64| x * x.ln() - x;
            Some((g(*hi) - g(*lo)) / (hi - lo))
        }
        _ => None,
    }
}

/// Resolution of the obstacle solve in price space.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PricingGrid {
    pub n_x: usize,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub cfl_ratio: f64,
}

impl PricingGrid {
    /// 400 interior nodes, CFL ratio 0.2 and a horizon of four variance
    /// swap rates (at least 0.1).
    pub fn for_target(nu: &ProbabilityMeasure) -> Self {
        let swap = expected_log(nu).map_or(0.0, |l| -2.0 * l);
        Self {
            n_x: 400,
            t_max: (4.0 * swap).max(0.1),
            cfl_ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McParams {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceBound {
    pub bound: f64,
    pub stderr: f64,
    #[serde(skip)]
    pub barrier: RootBarrier,
    pub n_paths: usize,
    pub grid: Grid,
    pub report: EmbeddingReport,
}

/// Price-space window `[ε/2, 2 q_{0.9999}(ν)]`.
pub fn pricing_domain(spec: &VarianceOptionSpec) -> (f64, f64) {
    let top = match spec.nu.atoms() {
        Some(a) => a.locations()[a.len() - 1],
        None => spec.nu.quantile(0.9999),
    };
    (0.5 * spec.epsilon, 2.0 * top.max(1.0))
}

/// Root barrier of `ν` for `dX = X dB` from `X_0 = 1`, pinned to 0 on the
/// contact set.
pub fn gbm_barrier(
    spec: &VarianceOptionSpec,
    grid: &PricingGrid,
) -> Result<(RootBarrier, Grid), PricingError> {
    spec.validate()?;
    let (a, b) = pricing_domain(spec);
    let mu = ProbabilityMeasure::dirac(1.0);
    let g = Grid::with_cfl_ratio(a, b, grid.n_x, grid.t_max, b * b, grid.cfl_ratio)?;
    let xs = g.xs();
    if let ConvexOrder::NotOrdered { witness } = convex_order_check(&mu, &spec.nu, &xs)? {
        return Err(PricingError::OrderViolation { witness });
    }
    let opts = SolveOptions {
        store_every: g.n_t,
        ..SolveOptions::default()
    };
    let sol = solve_obstacle(&Sigma::Identity, &mu, &spec.nu, &g, &opts)?;
    let raw = extract_barrier(&sol, &spec.nu, None)?;
    let barrier = regularize(&raw, &contact_set(&mu, &spec.nu, &xs, None))?;
    Ok((barrier, g))
}

/// Lower bound `E[f(τ_R)]` with its Monte Carlo standard error.
pub fn variance_bound_lower(
    spec: &VarianceOptionSpec,
    grid: &PricingGrid,
    mc: &McParams,
) -> Result<VarianceBound, PricingError> {
    let (barrier, g) = gbm_barrier(spec, grid)?;
    let cfg = SdeConfig::new(
        Sigma::Identity,
        ProbabilityMeasure::dirac(1.0),
        mc.dt,
        mc.t_max,
        mc.n_paths,
        mc.seed,
    )
    .with_stepping(Stepping::LogEuler);
    let report =
        simulate_embedding(&cfg, &barrier)?.with_target(&spec.nu, &linspace(g.a, g.b, 500));
    if !(report.unstopped_fraction < 0.01) {
        return Err(EmbedError::TooManyUnstopped(report.unstopped_fraction).into());
    }
    let est = Estimate::from_samples(report.tau_samples.iter().map(|&t| spec.payoff.eval(t)));
    Ok(VarianceBound {
        bound: est.mean,
        stderr: est.stderr,
        barrier,
        n_paths: mc.n_paths,
        grid: g,
        report,
    })
}

/// Target law implied by a call chain, in units of the forward. `ε` is the
/// smallest strike carrying mass.
pub fn ingest_market(
    quotes: &[MarketQuote],
    maturity: f64,
    forward: f64,
    payoff: Payoff,
) -> Result<VarianceOptionSpec, PricingError> {
    if !(forward > 0.0) || !forward.is_finite() {
        return Err(PricingError::InvalidSpec(format!(
            "forward {forward} must be positive"
        )));
    }
    let strikes: Vec<f64> = quotes.iter().map(|q| q.strike).collect();
    let prices: Vec<f64> = quotes.iter().map(|q| q.price).collect();
    let raw = breeden_litzenberger(&strikes, &prices, forward)?;
    let atoms = raw.atoms().expect("implied laws are atomic");
    let at_zero: f64 = atoms
        .iter()
        .filter(|&(x, _)| x <= 0.0)
        .map(|(_, p)| p)
        .sum();
    if at_zero > 0.0 {
        return Err(PricingError::SupportViolation {
            epsilon: 0.0,
            mass: at_zero,
        });
    }
    let nu = ProbabilityMeasure::atomic(atoms.iter().map(|(x, p)| (x / forward, p)).collect())?;
    let epsilon = nu.atoms().map(|a| a.locations()[0]).unwrap_or(1.0);
    VarianceOptionSpec::new(payoff, maturity, nu, epsilon)
}

/// `E[τ_R]` against `E[[ln X]_{τ_R}]` from the same paths.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TimeChangeCheck {
    pub tau: Estimate,
    pub log_qv: Estimate,
    /// Pathwise `τ - [ln X]_τ`.
    pub difference: Estimate,
    pub consistent: bool,
}

pub fn time_change_check(report: &EmbeddingReport) -> TimeChangeCheck {
    let tau = Estimate::from_samples(report.tau_samples.iter().copied());
    let log_qv = Estimate::from_samples(report.log_qv_samples.iter().copied());
    let difference = Estimate::from_samples(
        report
            .tau_samples
            .iter()
            .zip(&report.log_qv_samples)
            .map(|(t, q)| t - q),
    );
    let consistent = difference.mean.abs() <= 3.0 * difference.stderr.max(f64::EPSILON);
    TimeChangeCheck {
        tau,
        log_qv,
        difference,
        consistent,
    }
}

/// The identity `E[[X]_{τ_R}] = ∫x² μ(dx)` tested as written, next to the
/// martingale value `∫x² ν(dx) - ∫x² μ(dx)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentIdentityReport {
    pub estimate: Estimate,
    pub as_stated: f64,
    pub holds_as_stated: bool,
    pub martingale_value: f64,
    pub holds_martingale_value: bool,
}

pub fn gbm_moment_identity(
    report: &EmbeddingReport,
    nu: &ProbabilityMeasure,
) -> MomentIdentityReport {
    let estimate = Estimate::from_samples(report.qv_samples.iter().copied());
    let mu_second = 1.0;
    let martingale_value = nu.second_moment() - mu_second;
    let within = |v: f64| (estimate.mean - v).abs() <= 3.0 * estimate.stderr;
    MomentIdentityReport {
        estimate,
        as_stated: mu_second,
        holds_as_stated: within(mu_second),
        martingale_value,
        holds_martingale_value: within(martingale_value),
    }
}

/// Re-simulation of the time-changed model `S^R_t = X_{τ_R ∧ t/(T - t)}`.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessReport {
    /// `sup |u_{law(S^R_T)} - u_ν|` on the pricing window.
    pub terminal_distance: f64,
    /// `E[f([ln S^R]_T)]` with the quadratic variation realized on the calendar grid.
    pub realized: Estimate,
    pub bound: f64,
    pub combined_stderr: f64,
    pub within_three_stderr: bool,
    pub unstopped_fraction: f64,
    /// Largest calendar stopping time, always `< T`.
    pub latest_calendar_stop: f64,
}

/// Calendar times `t_k = T s_k / (1 + s_k)` sit over the business times
/// `s_k = k dt`, so `S^R` is monitored exactly where `X` is. Uses the seed
/// `mc.seed + 1`, independent of the bound's paths.
pub fn sharpness_witness(
    spec: &VarianceOptionSpec,
    bound: &VarianceBound,
    mc: &McParams,
) -> Result<WitnessReport, PricingError> {
    let t_cal = spec.maturity;
    let n_steps = (mc.t_max / mc.dt).ceil() as usize;
    let sqdt = mc.dt.sqrt();
    let b = &bound.barrier;
    let paths: Vec<Option<(f64, f64, f64)>> = (0..mc.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed.wrapping_add(1));
            rng.set_stream(p as u64);
            let (mut s, mut ls) = (0.0, 0.0_f64);
            let mut qv = 0.0;
            let mut cell = b.cell_of(1.0);
            if b.contains(0.0, 1.0) {
                return Some((1.0, 0.0, 0.0));
            }
            for k in 1..=n_steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                let s1 = k as f64 * mc.dt;
                let ls1 = ls - 0.5 * mc.dt + sqdt * z;
                if let Some(hit) = b.step(&mut cell, s, ls.exp(), s1, ls1.exp()) {
                    let d = hit.x.ln() - ls;
                    qv += d * d;
                    return Some((hit.x, qv, t_cal * hit.t / (1.0 + hit.t)));
                }
                qv += (ls1 - ls) * (ls1 - ls);
                s = s1;
                ls = ls1;
            }
            None
        })
        .collect();
    let stopped: Vec<(f64, f64, f64)> = paths.iter().flatten().copied().collect();
    let unstopped_fraction = 1.0 - stopped.len() as f64 / mc.n_paths.max(1) as f64;
    let terminal: Vec<f64> = stopped.iter().map(|s| s.0).collect();
    let g = &bound.grid;
    let terminal_distance = embedding_distance(&terminal, &spec.nu, &linspace(g.a, g.b, 500))?;
    let realized = Estimate::from_samples(stopped.iter().map(|s| spec.payoff.eval(s.1)));
    let combined_stderr = (realized.stderr.powi(2) + bound.stderr.powi(2)).sqrt();
    Ok(WitnessReport {
        terminal_distance,
        realized,
        bound: bound.bound,
        combined_stderr,
        within_three_stderr: (realized.mean - bound.bound).abs() <= 3.0 * combined_stderr,
        unstopped_fraction,
        latest_calendar_stop: stopped.iter().map(|s| s.2).fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::MarketQuote;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn bs_call(k: f64, vol: f64, t: f64) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let s = vol * t.sqrt();
        let d1 = (-k.ln() + 0.5 * s * s) / s;
        n.cdf(d1) - k * n.cdf(d1 - s)
    }

    #[test]
    fn payoff_parsing_and_validation() {
        let c: Payoff = "call(0.01)".parse().unwrap();
        assert_eq!(c.eval(0.05), 0.04);
        assert_eq!(c.eval(0.0), 0.0);
        assert_eq!("identity".parse::<Payoff>().unwrap().eval(0.3), 0.3);
        let a: Payoff = "affine(0,0;2,-0.1)".parse().unwrap();
        assert!((a.eval(0.1) - 0.1).abs() < 1e-15);
        assert!("affine(1,0.5)".parse::<Payoff>().is_err());
        assert!("affine(-1,0)".parse::<Payoff>().is_err());
        assert!("put(1)".parse::<Payoff>().is_err());
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Payoff>(&json).unwrap(), c);
    }

    #[test]
    fn spec_invariants() {
        let ln = ProbabilityMeasure::lognormal(-0.02, 0.04).unwrap();
        assert!(VarianceOptionSpec::new(Payoff::identity(), 1.0, ln.clone(), 0.3).is_ok());
        assert!(matches!(
            VarianceOptionSpec::new(Payoff::identity(), 1.0, ln, 0.9),
            Err(PricingError::SupportViolation { .. })
        ));
        let shifted = ProbabilityMeasure::atomic(vec![(0.5, 0.5), (2.0, 0.5)]).unwrap();
        assert!(matches!(
            VarianceOptionSpec::new(Payoff::identity(), 1.0, shifted, 0.5),
            Err(PricingError::InvalidSpec(_))
        ));
        let two = ProbabilityMeasure::atomic(vec![(0.5, 0.5), (1.5, 0.5)]).unwrap();
        assert!(matches!(
            VarianceOptionSpec::new(Payoff::identity(), 1.0, two, 0.6),
            Err(PricingError::SupportViolation { .. })
        ));
    }

    #[test]
    fn expected_log_closed_forms() {
        let ln = ProbabilityMeasure::lognormal(-0.02, 0.04).unwrap();
        assert_eq!(expected_log(&ln), Some(-0.02));
        let u = ProbabilityMeasure::uniform(0.5, 1.5).unwrap();
        let oracle = crate::measures::quadrature::integrate(|x: f64| x.ln(), 0.5, 1.5, 1e-13);
        assert!((expected_log(&u).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(
            expected_log(&ProbabilityMeasure::gaussian(1.0, 1.0).unwrap()),
            None
        );
    }

    #[test]
    fn market_chain_ingestion() {
        let quotes: Vec<MarketQuote> = (0..=30)
            .map(|i| {
                let k = 50.0 + 5.0 * i as f64;
                MarketQuote {
                    strike: k,
                    price: 100.0 * bs_call(k / 100.0, 0.2, 1.0),
                }
            })
            .collect();
        let spec = ingest_market(&quotes, 1.0, 100.0, Payoff::call(0.01).unwrap()).unwrap();
        assert!((spec.nu.mean() - 1.0).abs() < 1e-12);
        assert_eq!(spec.epsilon, 0.5);
        let ln = ProbabilityMeasure::lognormal(-0.02, 0.04).unwrap();
        for x in linspace(0.5, 2.0, 31) {
            assert!((spec.nu.potential(x) - ln.potential(x)).abs() < 0.02);
        }
        let mut bad = quotes.clone();
        bad[10].price = bad[9].price + 1.0;
        assert!(matches!(
            ingest_market(&bad, 1.0, 100.0, Payoff::identity()),
            Err(PricingError::Measure(
                MeasureError::ArbitrageDetected { .. }
            ))
        ));
    }

    #[test]
    fn butterfly_at_forward_has_zero_bound() {
        let quotes = vec![
            MarketQuote {
                strike: 0.9,
                price: 0.1,
            },
            MarketQuote {
                strike: 1.0,
                price: 0.0,
            },
            MarketQuote {
                strike: 1.1,
                price: 0.0,
            },
        ];
        let spec = ingest_market(&quotes, 1.0, 1.0, Payoff::call(0.0).unwrap()).unwrap();
        assert_eq!(spec.nu.atoms().unwrap().locations(), &[1.0]);
        let grid = PricingGrid {
            n_x: 99,
            t_max: 0.1,
            cfl_ratio: 0.2,
        };
        let mc = McParams {
            n_paths: 1000,
            dt: 1e-3,
            t_max: 1.0,
            seed: 3,
        };
        let r = variance_bound_lower(&spec, &grid, &mc).unwrap();
        assert_eq!(r.bound, 0.0);
        assert_eq!(r.report.unstopped_fraction, 0.0);
    }

    #[test]
    fn two_atom_target_matches_swap_rate() {
        let nu = ProbabilityMeasure::atomic(vec![(0.5, 0.5), (1.5, 0.5)]).unwrap();
        let spec = VarianceOptionSpec::new(Payoff::identity(), 1.0, nu.clone(), 0.5).unwrap();
        let grid = PricingGrid {
            n_x: 199,
            t_max: 1.0,
            cfl_ratio: 0.2,
        };
        let mc = McParams {
            n_paths: 20_000,
            dt: 1e-4,
            t_max: 10.0,
            seed: 11,
        };
        let r = variance_bound_lower(&spec, &grid, &mc).unwrap();
        let swap = -2.0 * expected_log(&nu).unwrap();
        assert!(
            (r.bound - swap).abs() <= 3.0 * r.stderr + 0.005,
            "{} vs {swap} ± {}",
            r.bound,
            r.stderr
        );
        let check = time_change_check(&r.report);
        assert!(check.consistent, "{check:?}");
        let m = gbm_moment_identity(&r.report, &nu);
        assert!(m.holds_martingale_value, "{m:?}");
        assert!((m.martingale_value - 0.25).abs() < 1e-12);
    }
}
