//! Explicit monotone finite-difference solvers for the obstacle problem
//! `min(u - u_ν, ∂_t u - σ²/2 ∂²_x u) = 0`, its penalized relaxation, the
//! heat equation, and the Rost problem `∂_t u = min(0, σ²/2 ∂²_x u)`.
//!
//! All schemes share the stencil `c_j (u_{j-1} - 2u_j + u_{j+1})` with
//! `c_j = dt σ²(t_n, x_j) / (2 dx²)`. Boundary columns keep their initial
//! values. Monotonicity requires `2 max c_j ≤ 1`, enforced through the
//! configurable safety factor.

use crate::measures::{convex_order_check, ConvexOrder, MeasureError, ProbabilityMeasure};
use crate::sigma::Sigma;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_SAFETY: f64 = 0.9;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("CflViolation: ratio {ratio:.6} exceeds safety {safety}")]
    CflViolation { ratio: f64, safety: f64 },
    #[error("OrderViolation: u_mu < u_nu at x = {witness}")]
    OrderViolation { witness: f64 },
    #[error("InvalidGrid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("Io: {0}")]
    Csv(#[from] csv::Error),
}

/// Uniform space-time grid on `[a, b] × [0, T]` with `n_x` interior points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub a: f64,
    pub b: f64,
    pub n_x: usize,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub n_t: usize,
    pub dx: f64,
    pub dt: f64,
}

impl Grid {
    pub fn new(a: f64, b: f64, n_x: usize, t_max: f64, n_t: usize) -> Result<Self, PdeError> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(PdeError::InvalidGrid(format!("domain [{a}, {b}]")));
        }
        if n_x < 3 || n_t < 1 {
            return Err(PdeError::InvalidGrid(format!("n_x = {n_x}, n_t = {n_t}")));
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(PdeError::InvalidGrid(format!("horizon {t_max}")));
        }
        Ok(Self {
            a,
            b,
            n_x,
            t_max,
            n_t,
            dx: (b - a) / (n_x + 1) as f64,
            dt: t_max / n_t as f64,
        })
    }

    /// Picks the smallest `n_t` with `dt σ²_max / dx² ≤ ratio`.
    pub fn with_cfl_ratio(
        a: f64,
        b: f64,
        n_x: usize,
        t_max: f64,
        sigma_sq_max: f64,
        ratio: f64,
    ) -> Result<Self, PdeError> {
        let g = Self::new(a, b, n_x, t_max, 1)?;
        if !(ratio > 0.0) {
            return Err(PdeError::InvalidGrid(format!("cfl ratio {ratio}")));
        }
        let n_t = (t_max * sigma_sq_max / (ratio * g.dx * g.dx))
            .ceil()
            .max(1.0) as usize;
        Self::new(a, b, n_x, t_max, n_t)
    }

    /// The `n_x + 2` spatial nodes including both boundaries.
    pub fn xs(&self) -> Vec<f64> {
        let m = self.n_x + 1;
        (0..=m)
            .map(|j| {
                if j == m {
                    self.b
                } else {
                    self.a + (self.b - self.a) * j as f64 / m as f64
                }
            })
            .collect()
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_t {
            self.t_max
        } else {
            self.t_max * n as f64 / self.n_t as f64
        }
    }

    /// Index of the node nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        (((x - self.a) / self.dx).round().max(0.0) as usize).min(self.n_x + 1)
    }
}

/// Domain covering both laws: full support for atomic laws, otherwise the
/// `1e-4` and `1 - 1e-4` quantiles.
pub fn default_domain(mu: &ProbabilityMeasure, nu: &ProbabilityMeasure) -> (f64, f64) {
    let ends = |m: &ProbabilityMeasure| {
        if m.is_atomic() {
            m.support()
        } else {
            (m.quantile(1e-4), m.quantile(1.0 - 1e-4))
        }
    };
    let (a1, b1) = ends(mu);
    let (a2, b2) = ends(nu);
    (a1.min(a2), b1.max(b2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "n")]
pub enum PdeKind {
    Obstacle,
    Penalized(f64),
    Heat,
    Rost,
}

/// Update rule plus any per-node data it needs.
#[derive(Debug, Clone)]
pub enum Scheme {
    Obstacle { obstacle: Vec<f64> },
    Penalized { obstacle: Vec<f64>, n: f64 },
    Heat,
    Rost,
}

impl Scheme {
    fn kind(&self) -> PdeKind {
        match self {
            Scheme::Obstacle { .. } => PdeKind::Obstacle,
            Scheme::Penalized { n, .. } => PdeKind::Penalized(*n),
            Scheme::Heat => PdeKind::Heat,
            Scheme::Rost => PdeKind::Rost,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub safety: f64,
    /// Keep every `store_every`-th time row; the first and last are always kept.
    pub store_every: usize,
    /// Contact tolerance tracked during obstacle solves; `None` uses
    /// `1e-8 (1 + |u_ν|)` per node.
    pub contact_tol: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            safety: DEFAULT_SAFETY,
            store_every: 1,
            contact_tol: None,
        }
    }
}

/// First contact times recorded while stepping.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactTrack {
    pub tol: Option<f64>,
    /// Per node; `f64::INFINITY` if contact never occurred.
    pub first_time: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdeMeta {
    pub kind: PdeKind,
    pub a: f64,
    pub b: f64,
    pub n_x: usize,
    pub n_t: usize,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub cfl_ratio: f64,
    pub sigma: String,
}

/// Stored time rows of a solve. Row `k` holds time `times[k]`.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub grid: Grid,
    pub kind: PdeKind,
    pub sigma_id: String,
    pub cfl_ratio: f64,
    xs: Vec<f64>,
    times: Vec<f64>,
    steps: Vec<usize>,
    values: Vec<f64>,
    obstacle: Option<Vec<f64>>,
    contact: Option<ContactTrack>,
}

impl PdeSolution {
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Time-step index of each stored row.
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn n_rows(&self) -> usize {
        self.times.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.xs.len();
        &self.values[k * w..(k + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.xs.len())
    }

    pub fn last_row(&self) -> &[f64] {
        self.row(self.n_rows() - 1)
    }

    /// True when every time step is stored.
    pub fn is_dense(&self) -> bool {
        self.n_rows() == self.grid.n_t + 1
    }

    pub fn obstacle(&self) -> Option<&[f64]> {
        self.obstacle.as_deref()
    }

    pub fn contact(&self) -> Option<&ContactTrack> {
        self.contact.as_ref()
    }

    /// Value at stored row `k`, linearly interpolated in `x`.
    pub fn value_at(&self, k: usize, x: f64) -> f64 {
        interp(&self.xs, self.row(k), x)
    }

    /// Value at time `t` (nearest stored row at or before `t`) and `x`.
    pub fn value_at_time(&self, t: f64, x: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t + 1e-12).max(1) - 1;
        self.value_at(k, x)
    }

    pub fn meta(&self) -> PdeMeta {
        PdeMeta {
            kind: self.kind,
            a: self.grid.a,
            b: self.grid.b,
            n_x: self.grid.n_x,
            n_t: self.grid.n_t,
            t_max: self.grid.t_max,
            cfl_ratio: self.cfl_ratio,
            sigma: self.sigma_id.clone(),
        }
    }

    /// Long-format `t,x,u` export of every `stride`-th stored row.
    pub fn write_csv(&self, path: impl AsRef<Path>, stride: usize) -> Result<(), PdeError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "x", "u"])?;
        let stride = stride.max(1);
        let last = self.n_rows() - 1;
        for k in (0..self.n_rows()).filter(|&k| k % stride == 0 || k == last) {
            let t = self.times[k];
            for (x, u) in self.xs.iter().zip(self.row(k)) {
                w.write_record([t.to_string(), x.to_string(), u.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_meta(&self, path: impl AsRef<Path>) -> Result<(), PdeError> {
        let mut f = std::fs::File::create(path)?;
        let s = serde_json::to_string_pretty(&self.meta()).map_err(std::io::Error::other)?;
        f.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Piecewise-linear interpolation on sorted `xs`, clamped at the ends.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = (x - x0) / (x1 - x0);
    ys[i - 1] * (1.0 - w) + ys[i] * w
}

fn sigma_sq_max(grid: &Grid, sigma: &Sigma, xs: &[f64]) -> f64 {
    let rows = if sigma.is_time_homogeneous() {
        1
    } else {
        grid.n_t
    };
    (0..rows)
        .flat_map(|n| {
            let t = grid.time(n);
            xs.iter().map(move |&x| sigma.eval(t, x).powi(2))
        })
        .fold(0.0, f64::max)
}

fn contact_tol_at(tol: Option<f64>, h: f64) -> f64 {
    tol.unwrap_or_else(|| crate::measures::default_contact_tol(h))
}

/// Runs `scheme` from `initial` (length `n_x + 2`, boundary values included).
pub fn solve_with_initial(
    grid: &Grid,
    sigma: &Sigma,
    initial: Vec<f64>,
    scheme: Scheme,
    opts: &SolveOptions,
) -> Result<PdeSolution, PdeError> {
    let xs = grid.xs();
    let w = xs.len();
    if initial.len() != w {
        return Err(PdeError::InvalidGrid(format!(
            "initial data has {} nodes, grid has {w}",
            initial.len()
        )));
    }
    if let Scheme::Obstacle { obstacle } | Scheme::Penalized { obstacle, .. } = &scheme {
        if obstacle.len() != w {
            return Err(PdeError::InvalidGrid(format!(
                "obstacle has {} nodes, grid has {w}",
                obstacle.len()
            )));
        }
    }
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    let base_ratio = grid.dt * sigma_sq_max(grid, sigma, &xs) * inv_dx2;
    let ratio = match &scheme {
        Scheme::Penalized { n, .. } => base_ratio + grid.dt * n,
        _ => base_ratio,
    };
    if !(ratio <= opts.safety) {
        return Err(PdeError::CflViolation {
            ratio,
            safety: opts.safety,
        });
    }

    let store_every = opts.store_every.max(1);
    let kind = scheme.kind();
    let mut coef: Vec<f64> = xs
        .iter()
        .map(|&x| 0.5 * grid.dt * sigma.eval(0.0, x).powi(2) * inv_dx2)
        .collect();
    let homogeneous = sigma.is_time_homogeneous();

    let mut contact = match &scheme {
        Scheme::Obstacle { obstacle } => Some(ContactTrack {
            tol: opts.contact_tol,
            first_time: initial
                .iter()
                .zip(obstacle)
                .map(|(&u, &h)| {
                    if u - h <= contact_tol_at(opts.contact_tol, h) {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .collect(),
        }),
        _ => None,
    };

    let n_rows = grid.n_t / store_every + 2;
    let mut values = Vec::with_capacity(n_rows * w);
    let mut times = Vec::with_capacity(n_rows);
    let mut steps = Vec::with_capacity(n_rows);
    values.extend_from_slice(&initial);
    times.push(0.0);
    steps.push(0);

    let mut cur = initial;
    let mut next = cur.clone();
    for n in 0..grid.n_t {
        if !homogeneous && n > 0 {
            let t = grid.time(n);
            for (c, &x) in coef.iter_mut().zip(&xs) {
                *c = 0.5 * grid.dt * sigma.eval(t, x).powi(2) * inv_dx2;
            }
        }
        match &scheme {
            Scheme::Obstacle { obstacle } => {
                for j in 1..w - 1 {
                    let v = cur[j] + coef[j] * (cur[j - 1] - 2.0 * cur[j] + cur[j + 1]);
                    next[j] = v.max(obstacle[j]);
                }
            }
            Scheme::Penalized { obstacle, n: pen } => {
                let k = grid.dt * pen;
                for j in 1..w - 1 {
                    let lap = cur[j - 1] - 2.0 * cur[j] + cur[j + 1];
                    next[j] = cur[j] + coef[j] * lap + k * (obstacle[j] - cur[j]).max(0.0);
                }
            }
            Scheme::Heat => {
                for j in 1..w - 1 {
                    next[j] = cur[j] + coef[j] * (cur[j - 1] - 2.0 * cur[j] + cur[j + 1]);
                }
            }
            Scheme::Rost => {
                for j in 1..w - 1 {
                    next[j] =
                        cur[j] + (coef[j] * (cur[j - 1] - 2.0 * cur[j] + cur[j + 1])).min(0.0);
                }
            }
        }
        if let (Some(track), Scheme::Obstacle { obstacle }) = (contact.as_mut(), &scheme) {
            let t0 = grid.time(n);
            for j in 1..w - 1 {
                if track.first_time[j].is_finite() {
                    continue;
                }
                let tol = contact_tol_at(track.tol, obstacle[j]);
                let g1 = next[j] - obstacle[j];
                if g1 <= tol {
                    let g0 = cur[j] - obstacle[j];
                    let frac = ((g0 - tol) / (g0 - g1)).clamp(0.0, 1.0);
                    track.first_time[j] = t0 + frac * grid.dt;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        let step = n + 1;
        if step % store_every == 0 || step == grid.n_t {
            values.extend_from_slice(&cur);
            times.push(grid.time(step));
            steps.push(step);
        }
    }

    let obstacle = match scheme {
        Scheme::Obstacle { obstacle } | Scheme::Penalized { obstacle, .. } => Some(obstacle),
        _ => None,
    };
    Ok(PdeSolution {
        grid: *grid,
        kind,
        sigma_id: sigma.label(),
        cfl_ratio: ratio,
        xs,
        times,
        steps,
        values,
        obstacle,
        contact,
    })
}

fn check_order(
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    xs: &[f64],
) -> Result<(), PdeError> {
    match convex_order_check(mu, nu, xs)? {
        ConvexOrder::Ordered => Ok(()),
        ConvexOrder::NotOrdered { witness } => Err(PdeError::OrderViolation { witness }),
    }
}

pub fn solve_obstacle(
    sigma: &Sigma,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    grid: &Grid,
    opts: &SolveOptions,
) -> Result<PdeSolution, PdeError> {
    let xs = grid.xs();
    check_order(mu, nu, &xs)?;
    let initial = mu.potential_fn().on_grid(&xs);
    let obstacle = nu.potential_fn().on_grid(&xs);
    solve_with_initial(grid, sigma, initial, Scheme::Obstacle { obstacle }, opts)
}

/// Penalized relaxation `∂_t w = σ²/2 ∂²_x w + n (h - w)^+` from `u_μ`.
pub fn solve_penalized(
    sigma: &Sigma,
    mu: &ProbabilityMeasure,
    h: impl Fn(f64) -> f64,
    grid: &Grid,
    n: f64,
    opts: &SolveOptions,
) -> Result<PdeSolution, PdeError> {
    if !(n >= 0.0) {
        return Err(PdeError::InvalidGrid(format!("penalty weight {n}")));
    }
    let xs = grid.xs();
    let initial = mu.potential_fn().on_grid(&xs);
    let obstacle = xs.iter().map(|&x| h(x)).collect();
    solve_with_initial(
        grid,
        sigma,
        initial,
        Scheme::Penalized { obstacle, n },
        opts,
    )
}

pub fn solve_heat(
    sigma: &Sigma,
    mu: &ProbabilityMeasure,
    grid: &Grid,
    opts: &SolveOptions,
) -> Result<PdeSolution, PdeError> {
    let initial = mu.potential_fn().on_grid(&grid.xs());
    solve_with_initial(grid, sigma, initial, Scheme::Heat, opts)
}

/// Rost problem from `u_μ - u_ν`.
pub fn solve_rost(
    sigma: &Sigma,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    grid: &Grid,
    opts: &SolveOptions,
) -> Result<PdeSolution, PdeError> {
    let xs = grid.xs();
    check_order(mu, nu, &xs)?;
    let initial = xs
        .iter()
        .map(|&x| mu.potential(x) - nu.potential(x))
        .collect();
    solve_with_initial(grid, sigma, initial, Scheme::Rost, opts)
}
