//! Probability measures on the real line and their potential functions.
//!
//! The potential of a law `μ` with finite first moment is
//! `u_μ(x) = -∫|x - y| μ(dy)`. It is concave, 1-Lipschitz, and
//! behaves like `-|x - m|` far out, `m` being the mean. Convex order
//! `μ ≤cx ν` is equivalent to equal means plus `u_μ ≥ u_ν` everywhere,
//! which is how [`convex_order_check`] tests it.

mod market;
pub mod quadrature;

pub use market::{breeden_litzenberger, read_market_csv, MarketQuote};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;
use thiserror::Error;

/// Total-mass tolerance for atomic measures.
pub const MASS_TOLERANCE: f64 = 1e-12;
/// Means closer than this are treated as equal by the convex-order test.
pub const MEAN_TOLERANCE: f64 = 1e-9;
/// Slack allowed in `u_μ ≥ u_ν` before a point is reported as a witness.
pub const ORDER_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("NonFiniteMoment: {0}")]
    NonFiniteMoment(String),
    #[error("InvalidMeasure: {0}")]
    Invalid(String),
    #[error("MeanMismatch: mean(mu) = {mu}, mean(nu) = {nu}")]
    MeanMismatch { mu: f64, nu: f64 },
    #[error("ArbitrageDetected: price curve fails no-arbitrage checks at strike index {index}")]
    ArbitrageDetected { index: usize },
    #[error("MeanRepairInfeasible: forward {forward} cannot be matched by moving mass to the end strikes")]
    MeanRepairInfeasible { forward: f64 },
    #[error("MarketData: {0}")]
    MarketData(String),
}

/// Sorted atoms with prefix sums of mass and first moment, so that the
/// potential can be evaluated in `O(log n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atoms {
    locs: Vec<f64>,
    masses: Vec<f64>,
    cum_mass: Vec<f64>,
    cum_first: Vec<f64>,
}

impl Atoms {
    fn new(mut pairs: Vec<(f64, f64)>) -> Result<Self, MeasureError> {
        if pairs.is_empty() {
            return Err(MeasureError::Invalid(
                "atomic measure needs at least one atom".into(),
            ));
        }
        for &(x, p) in &pairs {
            if !x.is_finite() {
                return Err(MeasureError::NonFiniteMoment(format!("atom at {x}")));
            }
            if !(p > 0.0) || !p.is_finite() {
                return Err(MeasureError::Invalid(format!("atom at {x} has mass {p}")));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(MeasureError::Invalid(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        let mut locs = Vec::with_capacity(pairs.len());
        let mut masses: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, p) in pairs {
            if locs.last() == Some(&x) {
                *masses.last_mut().unwrap() += p;
            } else {
                locs.push(x);
                masses.push(p);
            }
        }
        Ok(Self::from_sorted(locs, masses))
    }

    fn from_sorted(locs: Vec<f64>, masses: Vec<f64>) -> Self {
        let mut cum_mass = Vec::with_capacity(locs.len());
        let mut cum_first = Vec::with_capacity(locs.len());
        let (mut m, mut f) = (0.0, 0.0);
        for (&x, &p) in locs.iter().zip(&masses) {
            m += p;
            f += p * x;
            cum_mass.push(m);
            cum_first.push(f);
        }
        Self {
            locs,
            masses,
            cum_mass,
            cum_first,
        }
    }

    pub fn locations(&self) -> &[f64] {
        &self.locs
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.locs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locs.iter().copied().zip(self.masses.iter().copied())
    }

    fn total_mass(&self) -> f64 {
        *self.cum_mass.last().unwrap()
    }

    /// Number of atoms at or left of `x`.
    fn count_le(&self, x: f64) -> usize {
        self.locs.partition_point(|&y| y <= x)
    }

    fn cdf(&self, x: f64) -> f64 {
        match self.count_le(x) {
            0 => 0.0,
            k => self.cum_mass[k - 1],
        }
    }

    fn abs_moment(&self, x: f64) -> f64 {
        if self.locs.len() == 1 {
            return (x - self.locs[0]).abs();
        }
        let k = self.count_le(x);
        let (f, m) = if k == 0 {
            (0.0, 0.0)
        } else {
            (self.cum_mass[k - 1], self.cum_first[k - 1])
        };
        let total_first = *self.cum_first.last().unwrap();
        // Σ_{y≤x} p(x-y) + Σ_{y>x} p(y-x)
        x * (2.0 * f - self.total_mass()) + total_first - 2.0 * m
    }

    fn quantile(&self, p: f64) -> f64 {
        let target = p * self.total_mass();
        let i = self.cum_mass.partition_point(|&c| c < target);
        self.locs[i.min(self.locs.len() - 1)]
    }

    fn mean(&self) -> f64 {
        *self.cum_first.last().unwrap() / self.total_mass()
    }

    fn second_moment(&self) -> f64 {
        self.iter().map(|(x, p)| p * x * x).sum::<f64>() / self.total_mass()
    }
}

/// The concrete family of a [`ProbabilityMeasure`].
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureKind {
    Atomic(Atoms),
    Gaussian {
        mean: f64,
        variance: f64,
    },
    Lognormal {
        log_mean: f64,
        log_variance: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Sorted samples; ties are merged into weighted atoms for evaluation.
    Empirical {
        samples: Vec<f64>,
        atoms: Atoms,
    },
}

/// A law on the real line with finite second moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureSpec", into = "MeasureSpec")]
pub struct ProbabilityMeasure {
    kind: MeasureKind,
    mean: f64,
    second_moment: f64,
}

/// Serialized form of a measure, e.g. `{"kind":"atomic","atoms":[[x,p],...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeasureSpec {
    Atomic { atoms: Vec<(f64, f64)> },
    Gaussian { mean: f64, variance: f64 },
    Lognormal { log_mean: f64, log_variance: f64 },
    Uniform { lo: f64, hi: f64 },
    Empirical { samples: Vec<f64> },
}

impl TryFrom<MeasureSpec> for ProbabilityMeasure {
    type Error = MeasureError;

    fn try_from(spec: MeasureSpec) -> Result<Self, Self::Error> {
        match spec {
            MeasureSpec::Atomic { atoms } => Self::atomic(atoms),
            MeasureSpec::Gaussian { mean, variance } => Self::gaussian(mean, variance),
            MeasureSpec::Lognormal {
                log_mean,
                log_variance,
            } => Self::lognormal(log_mean, log_variance),
            MeasureSpec::Uniform { lo, hi } => Self::uniform(lo, hi),
            MeasureSpec::Empirical { samples } => Self::empirical(samples),
        }
    }
}

impl From<ProbabilityMeasure> for MeasureSpec {
    fn from(m: ProbabilityMeasure) -> Self {
        match m.kind {
            MeasureKind::Atomic(a) => MeasureSpec::Atomic {
                atoms: a.iter().collect(),
            },
            MeasureKind::Gaussian { mean, variance } => MeasureSpec::Gaussian { mean, variance },
            MeasureKind::Lognormal {
                log_mean,
                log_variance,
            } => MeasureSpec::Lognormal {
                log_mean,
                log_variance,
            },
            MeasureKind::Uniform { lo, hi } => MeasureSpec::Uniform { lo, hi },
            MeasureKind::Empirical { samples, .. } => MeasureSpec::Empirical { samples },
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl ProbabilityMeasure {
    fn finish(kind: MeasureKind, mean: f64, second_moment: f64) -> Result<Self, MeasureError> {
        if !mean.is_finite() || !second_moment.is_finite() {
            return Err(MeasureError::NonFiniteMoment(format!(
                "mean {mean}, second moment {second_moment}"
            )));
        }
        Ok(Self {
            kind,
            mean,
            second_moment,
        })
    }

    /// Finitely supported law from `(location, mass)` pairs. Repeated
    /// locations are merged.
    pub fn atomic(pairs: Vec<(f64, f64)>) -> Result<Self, MeasureError> {
        let atoms = Atoms::new(pairs)?;
        let (m, s) = (atoms.mean(), atoms.second_moment());
        Self::finish(MeasureKind::Atomic(atoms), m, s)
    }

    pub fn dirac(x: f64) -> Self {
        Self::atomic(vec![(x, 1.0)]).expect("finite dirac location")
    }

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self, MeasureError> {
        if !(variance >= 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(MeasureError::Invalid(format!(
                "gaussian({mean}, {variance})"
            )));
        }
        Self::finish(
            MeasureKind::Gaussian { mean, variance },
            mean,
            variance + mean * mean,
        )
    }

    /// Law of `exp(Y)` with `Y ~ N(log_mean, log_variance)`.
    pub fn lognormal(log_mean: f64, log_variance: f64) -> Result<Self, MeasureError> {
        if !(log_variance >= 0.0) || !log_variance.is_finite() || !log_mean.is_finite() {
            return Err(MeasureError::Invalid(format!(
                "lognormal({log_mean}, {log_variance})"
            )));
        }
        let mean = (log_mean + 0.5 * log_variance).exp();
        let second = (2.0 * log_mean + 2.0 * log_variance).exp();
        Self::finish(
            MeasureKind::Lognormal {
                log_mean,
                log_variance,
            },
            mean,
            second,
        )
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, MeasureError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(MeasureError::Invalid(format!("uniform({lo}, {hi})")));
        }
        let mean = 0.5 * (lo + hi);
        let second = (lo * lo + lo * hi + hi * hi) / 3.0;
        Self::finish(MeasureKind::Uniform { lo, hi }, mean, second)
    }

    /// Equal-weight law of the given samples.
    pub fn empirical(mut samples: Vec<f64>) -> Result<Self, MeasureError> {
        if samples.is_empty() {
            return Err(MeasureError::Invalid(
                "empirical measure needs samples".into(),
            ));
        }
        if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
            return Err(MeasureError::NonFiniteMoment(format!("sample {bad}")));
        }
        samples.sort_by(f64::total_cmp);
        let w = 1.0 / samples.len() as f64;
        let mut locs: Vec<f64> = Vec::new();
        let mut masses: Vec<f64> = Vec::new();
        let mut i = 0;
        while i < samples.len() {
            let x = samples[i];
            let mut j = i;
            while j < samples.len() && samples[j] == x {
                j += 1;
            }
            locs.push(x);
            masses.push((j - i) as f64 * w);
            i = j;
        }
        let atoms = Atoms::from_sorted(locs, masses);
        let (m, s) = (atoms.mean(), atoms.second_moment());
        Self::finish(MeasureKind::Empirical { samples, atoms }, m, s)
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn variance(&self) -> f64 {
        (self.second_moment - self.mean * self.mean).max(0.0)
    }

    /// Atoms of an atomic or empirical measure.
    pub fn atoms(&self) -> Option<&Atoms> {
        match &self.kind {
            MeasureKind::Atomic(a) | MeasureKind::Empirical { atoms: a, .. } => Some(a),
            _ => None,
        }
    }

    pub fn is_atomic(&self) -> bool {
        self.atoms().is_some()
    }

    /// `μ((-∞, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        match &self.kind {
            MeasureKind::Atomic(a) | MeasureKind::Empirical { atoms: a, .. } => a.cdf(x),
            MeasureKind::Gaussian { mean, variance } => {
                if *variance == 0.0 {
                    if x >= *mean {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    std_normal().cdf((x - mean) / variance.sqrt())
                }
            }
            MeasureKind::Lognormal {
                log_mean,
                log_variance,
            } => {
                if x <= 0.0 {
                    0.0
                } else if *log_variance == 0.0 {
                    if x.ln() >= *log_mean {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    std_normal().cdf((x.ln() - log_mean) / log_variance.sqrt())
                }
            }
            MeasureKind::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// Smallest `x` with `cdf(x) ≥ p` (for `p ∈ (0,1)`).
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match &self.kind {
            MeasureKind::Atomic(a) | MeasureKind::Empirical { atoms: a, .. } => a.quantile(p),
            MeasureKind::Gaussian { mean, variance } => {
                mean + variance.sqrt() * std_normal().inverse_cdf(p)
            }
            MeasureKind::Lognormal {
                log_mean,
                log_variance,
            } => (log_mean + log_variance.sqrt() * std_normal().inverse_cdf(p)).exp(),
            MeasureKind::Uniform { lo, hi } => lo + p * (hi - lo),
        }
    }

    /// Smallest and largest points of the support, infinite when unbounded.
    pub fn support(&self) -> (f64, f64) {
        match &self.kind {
            MeasureKind::Atomic(a) | MeasureKind::Empirical { atoms: a, .. } => {
                (a.locs[0], *a.locs.last().unwrap())
            }
            MeasureKind::Gaussian { mean, variance } if *variance == 0.0 => (*mean, *mean),
            MeasureKind::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            MeasureKind::Lognormal {
                log_variance,
                log_mean,
            } if *log_variance == 0.0 => (log_mean.exp(), log_mean.exp()),
            MeasureKind::Lognormal { .. } => (0.0, f64::INFINITY),
            MeasureKind::Uniform { lo, hi } => (*lo, *hi),
        }
    }

    /// `∫|x - y| μ(dy)` in closed form.
    pub fn abs_moment(&self, x: f64) -> f64 {
        match &self.kind {
            MeasureKind::Atomic(a) | MeasureKind::Empirical { atoms: a, .. } => a.abs_moment(x),
            MeasureKind::Gaussian { mean, variance } => {
                let s = variance.sqrt();
                if s == 0.0 {
                    return (x - mean).abs();
                }
                let z = (x - mean) / s;
                s * (2.0 * phi(z) + z * (2.0 * std_normal().cdf(z) - 1.0))
            }
            MeasureKind::Lognormal {
                log_mean,
                log_variance,
            } => {
                // E|S-x| = 2E(S-x)^+ - (E S - x)
                if x <= 0.0 {
                    return self.mean - x;
                }
                let s = log_variance.sqrt();
                let call = if s == 0.0 {
                    (log_mean.exp() - x).max(0.0)
                } else {
                    let d1 = (log_mean + log_variance - x.ln()) / s;
                    let n = std_normal();
                    self.mean * n.cdf(d1) - x * n.cdf(d1 - s)
                };
                2.0 * call - (self.mean - x)
            }
            MeasureKind::Uniform { lo, hi } => {
                if x <= *lo || x >= *hi {
                    (x - 0.5 * (lo + hi)).abs()
                } else {
                    ((x - lo).powi(2) + (hi - x).powi(2)) / (2.0 * (hi - lo))
                }
            }
        }
    }

    /// The potential `u_μ(x) = -∫|x - y| μ(dy)`.
    pub fn potential(&self, x: f64) -> f64 {
        -self.abs_moment(x)
    }

    /// Right derivative of the potential, `1 - 2μ((-∞, x])`.
    pub fn potential_right_derivative(&self, x: f64) -> f64 {
        1.0 - 2.0 * self.cdf(x)
    }

    /// Left derivative of the potential, `1 - 2μ((-∞, x))`.
    pub fn potential_left_derivative(&self, x: f64) -> f64 {
        match self.atoms() {
            Some(a) => {
                let k = a.locs.partition_point(|&y| y < x);
                1.0 - 2.0 * if k == 0 { 0.0 } else { a.cum_mass[k - 1] }
            }
            None => self.potential_right_derivative(x),
        }
    }

    pub fn potential_fn(&self) -> PotentialFn<'_> {
        PotentialFn { source: self }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            MeasureKind::Atomic(a) | MeasureKind::Empirical { atoms: a, .. } => {
                if a.len() == 1 {
                    return a.locs[0];
                }
                let u: f64 = rng.random::<f64>() * a.total_mass();
                let i = a.cum_mass.partition_point(|&c| c <= u);
                a.locs[i.min(a.len() - 1)]
            }
            MeasureKind::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            MeasureKind::Lognormal {
                log_mean,
                log_variance,
            } => {
                let z: f64 = StandardNormal.sample(rng);
                (log_mean + log_variance.sqrt() * z).exp()
            }
            MeasureKind::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Evaluable potential function of a measure. For atomic sources it is
/// piecewise linear with breakpoints at the atoms.
#[derive(Debug, Clone, Copy)]
pub struct PotentialFn<'a> {
    source: &'a ProbabilityMeasure,
}

impl<'a> PotentialFn<'a> {
    pub fn source(&self) -> &'a ProbabilityMeasure {
        self.source
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.source.potential(x)
    }

    pub fn right_derivative(&self, x: f64) -> f64 {
        self.source.potential_right_derivative(x)
    }

    /// Breakpoints and the slope to the right of each, for atomic sources.
    /// The slope left of the first breakpoint is `+1`.
    pub fn pieces(&self) -> Option<Vec<(f64, f64)>> {
        self.source.atoms().map(|a| {
            a.locs
                .iter()
                .zip(&a.cum_mass)
                .map(|(&x, &c)| (x, 1.0 - 2.0 * c))
                .collect()
        })
    }

    pub fn on_grid(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Outcome of [`convex_order_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvexOrder {
    Ordered,
    /// `u_μ(witness) < u_ν(witness)`.
    NotOrdered {
        witness: f64,
    },
}

/// Tests `μ ≤cx ν` on `grid` plus every atom of either measure.
pub fn convex_order_check(
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    grid: &[f64],
) -> Result<ConvexOrder, MeasureError> {
    if (mu.mean() - nu.mean()).abs() > MEAN_TOLERANCE {
        return Err(MeasureError::MeanMismatch {
            mu: mu.mean(),
            nu: nu.mean(),
        });
    }
    let extra = mu
        .atoms()
        .into_iter()
        .chain(nu.atoms())
        .flat_map(|a| a.locations().iter().copied());
    let mut worst: Option<(f64, f64)> = None;
    for x in grid.iter().copied().chain(extra) {
        let gap = mu.potential(x) - nu.potential(x);
        if gap < -ORDER_SLACK && worst.is_none_or(|(_, g)| gap < g) {
            worst = Some((x, gap));
        }
    }
    Ok(match worst {
        None => ConvexOrder::Ordered,
        Some((witness, _)) => ConvexOrder::NotOrdered { witness },
    })
}

/// Default contact tolerance `1e-8 (1 + |u_ν(x)|)`.
pub fn default_contact_tol(u_nu: f64) -> f64 {
    1e-8 * (1.0 + u_nu.abs())
}

/// Grid points where `u_μ` and `u_ν` coincide. Both grid endpoints are
/// always included; they stand in for `±∞`. `tol = None` selects
/// [`default_contact_tol`].
pub fn contact_set(
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    grid: &[f64],
    tol: Option<f64>,
) -> Vec<f64> {
    let n = grid.len();
    grid.iter()
        .enumerate()
        .filter(|&(i, &x)| {
            if i == 0 || i + 1 == n {
                return true;
            }
            let un = nu.potential(x);
            let tol = tol.unwrap_or_else(|| default_contact_tol(un));
            (mu.potential(x) - un).abs() <= tol
        })
        .map(|(_, &x)| x)
        .collect()
}

/// `n` equally spaced points on `[a, b]`, both ends included and exact.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
