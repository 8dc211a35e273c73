//! Root barriers `R = {(t, x) : t ≥ f(x)}` stored through their barrier
//! function on a finite, strictly increasing set of columns.
//!
//! `f(x) = +∞` marks a column the barrier never reaches. The two extreme
//! columns always carry `f = 0`; they stand in for the rows at `±∞`, so a
//! path leaving `[xs[0], xs[last]]` is stopped.

use crate::measures::ProbabilityMeasure;
use crate::obstacle_pde::{PdeKind, PdeSolution};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("InvalidBarrier: {0}")]
    Invalid(String),
    #[error("GridMismatch: barriers are defined on different columns")]
    GridMismatch,
    #[error("ContactOffGrid: contact point {0} is not a barrier column")]
    ContactOffGrid(f64),
    #[error("NotObstacle: barrier extraction needs an obstacle solve, got {0:?}")]
    NotObstacle(PdeKind),
    #[error("ToleranceMismatch: solution tracked contact at {tracked:?} but {requested:?} was requested and rows are not dense")]
    ToleranceMismatch {
        tracked: Option<f64>,
        requested: Option<f64>,
    },
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("Io: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    FromPde,
    Direct,
    Manual,
}

/// Sub-grid rule for `f` between columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Interpolation {
    /// Linear in `x`; a neighbouring `+∞` makes the whole gap `+∞`.
    #[default]
    Linear,
    /// Minimum of the two neighbouring columns.
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombineMode {
    Union,
    Intersection,
}

/// First entrance of a path into a barrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootBarrier {
    xs: Vec<f64>,
    f: Vec<f64>,
    pub provenance: Provenance,
    pub interpolation: Interpolation,
    /// `(xs[0], 1/dx)` when the columns are uniformly spaced.
    uniform: Option<(f64, f64)>,
}

fn detect_uniform(xs: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    let dx = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let uniform = xs
        .iter()
        .enumerate()
        .all(|(j, &x)| (x - (xs[0] + dx * j as f64)).abs() <= 1e-9 * dx);
    uniform.then(|| (xs[0], 1.0 / dx))
}

impl RootBarrier {
    pub fn new(xs: Vec<f64>, f: Vec<f64>, provenance: Provenance) -> Result<Self, BarrierError> {
        if xs.len() < 2 || xs.len() != f.len() {
            return Err(BarrierError::Invalid(format!(
                "{} columns, {} values",
                xs.len(),
                f.len()
            )));
        }
        if xs.iter().any(|x| !x.is_finite()) || xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BarrierError::Invalid(
                "columns must be finite and strictly increasing".into(),
            ));
        }
        if f.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(BarrierError::Invalid(
                "barrier values must lie in [0, inf]".into(),
            ));
        }
        if f[0] != 0.0 || f[f.len() - 1] != 0.0 {
            return Err(BarrierError::Invalid(
                "extreme columns must have f = 0".into(),
            ));
        }
        let uniform = detect_uniform(&xs);
        Ok(Self {
            xs,
            f,
            provenance,
            interpolation: Interpolation::Linear,
            uniform,
        })
    }

    /// `f ≡ t` on the interior of `xs`.
    pub fn vertical(xs: Vec<f64>, t: f64) -> Result<Self, BarrierError> {
        let n = xs.len();
        let f = (0..n)
            .map(|j| if j == 0 || j + 1 == n { 0.0 } else { t })
            .collect();
        Self::new(xs, f, Provenance::Manual)
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    /// Number of columns `≤ x`.
    #[inline]
    fn upper(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.uniform {
            Some((a, inv)) => {
                let g = (x - a) * inv;
                if !(g >= 0.0) {
                    return usize::from(x >= self.xs[0]);
                }
                let mut k = ((g as usize).saturating_add(1)).min(n);
                // Guess is off by at most one slot of rounding.
                while k > 0 && self.xs[k - 1] > x {
                    k -= 1;
                }
                while k < n && self.xs[k] <= x {
                    k += 1;
                }
                k
            }
            None => self.xs.partition_point(|&c| c <= x),
        }
    }

    /// Number of columns `< x`.
    #[inline]
    fn lower(&self, x: f64) -> usize {
        let k = self.upper(x);
        if k > 0 && self.xs[k - 1] == x {
            k - 1
        } else {
            k
        }
    }

    /// Barrier value at `x` given `i = upper(x)`.
    #[inline]
    fn value_in_cell(&self, i: usize, x: f64) -> f64 {
        let n = self.xs.len();
        if i == 0 || i == n || (i == n - 1 && x >= self.xs[n - 1]) || x <= self.xs[0] {
            return 0.0;
        }
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let (f0, f1) = (self.f[i - 1], self.f[i]);
        if x == x0 {
            return f0;
        }
        match self.interpolation {
            Interpolation::Conservative => f0.min(f1),
            Interpolation::Linear => {
                if f0.is_infinite() || f1.is_infinite() {
                    f64::INFINITY
                } else {
                    f0 + (f1 - f0) * ((x - x0) / (x1 - x0))
                }
            }
        }
    }

    /// Barrier value at `x` under the configured interpolation. On and
    /// beyond the extreme columns the barrier is `0`.
    pub fn value_at(&self, x: f64) -> f64 {
        self.value_in_cell(self.upper(x), x)
    }

    pub fn contains(&self, t: f64, x: f64) -> bool {
        t >= self.value_at(x)
    }

    /// Entrance into the barrier along the straight segment from
    /// `(t0, x0)` to `(t1, x1)`, excluding the start point. Column crossings
    /// are checked at the linearly interpolated crossing time; the end point
    /// is checked with [`RootBarrier::contains`].
    #[inline]
    pub fn segment_hit(&self, t0: f64, x0: f64, t1: f64, x1: f64) -> Option<Hit> {
        let xs = &self.xs;
        let end_cell = self.upper(x1);
        if x1 > x0 {
            let start = self.upper(x0);
            for j in start..end_cell {
                let s = t0 + (t1 - t0) * (xs[j] - x0) / (x1 - x0);
                if s >= self.f[j] {
                    return Some(Hit { t: s, x: xs[j] });
                }
            }
        } else if x1 < x0 {
            let start = self.lower(x0);
            let end = if end_cell > 0 && xs[end_cell - 1] == x1 {
                end_cell - 1
            } else {
                end_cell
            };
            for j in (end..start).rev() {
                let s = t0 + (t1 - t0) * (x0 - xs[j]) / (x0 - x1);
                if s >= self.f[j] {
                    return Some(Hit { t: s, x: xs[j] });
                }
            }
        }
        if t1 >= self.value_in_cell(end_cell, x1) {
            return Some(Hit { t: t1, x: x1 });
        }
        None
    }

    /// Cell index of `x` for [`RootBarrier::step`]: the number of columns `≤ x`.
    pub fn cell_of(&self, x: f64) -> usize {
        self.upper(x)
    }

    /// Same as [`RootBarrier::segment_hit`] for a path whose start point
    /// lies in `*cell`; updates `*cell` to the end point's cell. Steps that
    /// stay inside one cell skip the column search.
    #[inline]
    pub fn step(&self, cell: &mut usize, t0: f64, x0: f64, t1: f64, x1: f64) -> Option<Hit> {
        let c = *cell;
        let n = self.xs.len();
        let lo = if c > 0 {
            self.xs[c - 1]
        } else {
            f64::NEG_INFINITY
        };
        let hi = if c < n { self.xs[c] } else { f64::INFINITY };
        if lo <= x1 && x1 < hi {
            return (t1 >= self.value_in_cell(c, x1)).then_some(Hit { t: t1, x: x1 });
        }
        *cell = self.upper(x1);
        self.segment_hit(t0, x0, t1, x1)
    }

    /// First entrance of a sampled path into the barrier.
    pub fn hit_time(&self, path: &[(f64, f64)]) -> Option<Hit> {
        let &(t, x) = path.first()?;
        if self.contains(t, x) {
            return Some(Hit { t, x });
        }
        path.windows(2)
            .find_map(|w| self.segment_hit(w[0].0, w[0].1, w[1].0, w[1].1))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), BarrierError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "f"])?;
        // Debug formatting keeps `0.0` distinct from integers and prints `+∞` as `inf`.
        for (x, f) in self.xs.iter().zip(&self.f) {
            w.write_record([format!("{x:?}"), format!("{f:?}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, provenance: Provenance) -> Result<Self, BarrierError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut xs = Vec::new();
        let mut f = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64, BarrierError> {
                let s = s.trim();
                if s.eq_ignore_ascii_case("inf") {
                    Ok(f64::INFINITY)
                } else {
                    s.parse()
                        .map_err(|_| BarrierError::Invalid(format!("bad number '{s}'")))
                }
            };
            xs.push(parse(rec.get(0).unwrap_or(""))?);
            f.push(parse(rec.get(1).unwrap_or(""))?);
        }
        Self::new(xs, f, provenance)
    }
}

/// Barrier function read off an obstacle solution: the first time
/// `u - u_ν ≤ tol` at each column, interpolated linearly between the
/// bracketing time steps, or `+∞` if contact never happens. `tol = None`
/// uses the relative default `1e-8 (1 + |u_ν|)`.
pub fn extract_barrier(
    sol: &PdeSolution,
    nu: &ProbabilityMeasure,
    tol: Option<f64>,
) -> Result<RootBarrier, BarrierError> {
    if sol.kind != PdeKind::Obstacle {
        return Err(BarrierError::NotObstacle(sol.kind));
    }
    let xs = sol.xs().to_vec();
    let n = xs.len();
    let tol_at = |h: f64| tol.unwrap_or_else(|| crate::measures::default_contact_tol(h));
    let mut f = if sol.is_dense() {
        let times = sol.times();
        (0..n)
            .map(|j| {
                let h = nu.potential(xs[j]);
                let tol = tol_at(h);
                let mut prev = f64::NAN;
                for (k, row) in sol.rows().enumerate() {
                    let g = row[j] - h;
                    if g <= tol {
                        if k == 0 {
                            return 0.0;
                        }
                        let frac = ((prev - tol) / (prev - g)).clamp(0.0, 1.0);
                        return times[k - 1] + frac * (times[k] - times[k - 1]);
                    }
                    prev = g;
                }
                f64::INFINITY
            })
            .collect::<Vec<_>>()
    } else {
        match sol.contact() {
            Some(track) if track.tol == tol => track.first_time.clone(),
            other => {
                return Err(BarrierError::ToleranceMismatch {
                    tracked: other.and_then(|t| t.tol),
                    requested: tol,
                })
            }
        }
    };
    f[0] = 0.0;
    f[n - 1] = 0.0;
    RootBarrier::new(xs, f, Provenance::FromPde)
}

fn same_column(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Sets `f = 0` on every contact point.
pub fn regularize(b: &RootBarrier, contact: &[f64]) -> Result<RootBarrier, BarrierError> {
    let mut out = b.clone();
    for &c in contact {
        let i = b.xs.partition_point(|&x| x < c);
        let hit = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .find(|&k| k < b.xs.len() && same_column(b.xs[k], c));
        match hit {
            Some(k) => out.f[k] = 0.0,
            None => return Err(BarrierError::ContactOffGrid(c)),
        }
    }
    Ok(out)
}

/// Union takes the pointwise minimum of the barrier functions, intersection
/// the pointwise maximum.
pub fn combine(
    b1: &RootBarrier,
    b2: &RootBarrier,
    mode: CombineMode,
) -> Result<RootBarrier, BarrierError> {
    if b1.xs.len() != b2.xs.len() || b1.xs.iter().zip(&b2.xs).any(|(a, b)| !same_column(*a, *b)) {
        return Err(BarrierError::GridMismatch);
    }
    let f =
        b1.f.iter()
            .zip(&b2.f)
            .map(|(&a, &b)| match mode {
                CombineMode::Union => a.min(b),
                CombineMode::Intersection => a.max(b),
            })
            .collect();
    Ok(RootBarrier {
        xs: b1.xs.clone(),
        f,
        provenance: Provenance::Manual,
        interpolation: b1.interpolation,
        uniform: b1.uniform,
    })
}

/// Samples per column ray in [`barrier_distance`].
pub const RAY_SAMPLES: usize = 64;

/// One column of a compactified barrier graph: evenly spaced samples on the
/// vertical ray from `t_lo` to `1` at height `y`.
struct Ray {
    y: f64,
    t_lo: f64,
}

impl Ray {
    fn sample(&self, k: usize) -> f64 {
        if self.t_lo >= 1.0 {
            1.0
        } else if k + 1 == RAY_SAMPLES {
            1.0
        } else {
            self.t_lo + (1.0 - self.t_lo) * k as f64 / (RAY_SAMPLES - 1) as f64
        }
    }

    fn n(&self) -> usize {
        if self.t_lo >= 1.0 {
            1
        } else {
            RAY_SAMPLES
        }
    }

    /// Squared distance from `(t, y)` to the nearest sample on the ray.
    fn dist2(&self, t: f64, y: f64) -> f64 {
        let dy = y - self.y;
        let n = self.n();
        let k = if n == 1 {
            0
        } else {
            let step = (1.0 - self.t_lo) / (n - 1) as f64;
            (((t - self.t_lo) / step).round().max(0.0) as usize).min(n - 1)
        };
        // The rounded index is nearest up to one slot of floating error.
        [k.saturating_sub(1), k, (k + 1).min(n - 1)]
            .into_iter()
            .map(|i| {
                let dt = t - self.sample(i);
                dt * dt + dy * dy
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn compactify(b: &RootBarrier) -> Vec<Ray> {
    b.xs.iter()
        .zip(&b.f)
        .map(|(&x, &f)| Ray {
            y: x / (1.0 + x.abs()),
            t_lo: if f.is_infinite() { 1.0 } else { f / (1.0 + f) },
        })
        .collect()
}

fn directed(a: &[Ray], b: &[Ray]) -> f64 {
    let mut worst: f64 = 0.0;
    for ra in a {
        for k in 0..ra.n() {
            let t = ra.sample(k);
            let best = b
                .iter()
                .map(|rb| rb.dist2(t, ra.y))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
    }
    worst.sqrt()
}

/// Hausdorff distance between the sampled barrier graphs after the map
/// `(t, x) ↦ (t / (1 + t), x / (1 + |x|))`, with `t = ∞` sent to `1`.
pub fn barrier_distance(b1: &RootBarrier, b2: &RootBarrier) -> f64 {
    let (r1, r2) = (compactify(b1), compactify(b2));
    directed(&r1, &r2).max(directed(&r2, &r1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::linspace;

    fn q00() -> RootBarrier {
        let xs = linspace(-4.0, 4.0, 81);
        let f = xs
            .iter()
            .map(|&x: &f64| {
                if x.abs() >= 3.0 - 1e-9 || (x.abs() - 1.0).abs() < 1e-9 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        RootBarrier::new(xs, f, Provenance::Manual).unwrap()
    }

    #[test]
    fn validation() {
        assert!(RootBarrier::new(vec![0.0, 1.0], vec![0.0, 0.0], Provenance::Manual).is_ok());
        assert!(
            RootBarrier::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.0], Provenance::Manual).is_err()
        );
        assert!(
            RootBarrier::new(vec![0.0, 0.0, 2.0], vec![0.0, 0.0, 0.0], Provenance::Manual).is_err()
        );
        assert!(RootBarrier::new(
            vec![0.0, 1.0, 2.0],
            vec![0.0, -1.0, 0.0],
            Provenance::Manual
        )
        .is_err());
    }

    #[test]
    fn hit_time_examples() {
        let xs = linspace(-1.0, 1.0, 21);
        let zero = RootBarrier::new(xs.clone(), vec![0.0; 21], Provenance::Manual).unwrap();
        let path = [(0.3, 0.05), (0.4, 0.1)];
        assert_eq!(zero.hit_time(&path), Some(Hit { t: 0.3, x: 0.05 }));

        let mut f = vec![f64::INFINITY; 21];
        f[0] = 0.0;
        f[20] = 0.0;
        let never = RootBarrier::new(xs.clone(), f, Provenance::Manual).unwrap();
        let inside: Vec<(f64, f64)> = (0..100)
            .map(|i| (i as f64 * 0.01, 0.5 * (i as f64 * 0.3).sin()))
            .collect();
        assert_eq!(never.hit_time(&inside), None);

        let vert = RootBarrier::vertical(xs, 1.0).unwrap();
        let path: Vec<(f64, f64)> = (0..=150)
            .map(|i| (i as f64 * 0.01, 0.3 * (i as f64 * 0.1).sin()))
            .collect();
        assert_eq!(vert.hit_time(&path).unwrap().t, 1.0);
    }

    #[test]
    fn crossings_hit_spikes_and_exits() {
        // Spike at 0 from t = 0.5, nothing else inside.
        let xs = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
        let b = RootBarrier::new(
            xs,
            vec![0.0, f64::INFINITY, 0.5, f64::INFINITY, 0.0],
            Provenance::Manual,
        )
        .unwrap();
        assert_eq!(b.hit_time(&[(0.0, -0.1), (0.2, 0.1)]), None);
        assert_eq!(b.hit_time(&[(0.0, -0.1), (0.2, 0.1), (0.6, -0.3)]), None);
        let spike = b.hit_time(&[(0.0, -0.1), (0.2, 0.1), (1.0, -0.1)]).unwrap();
        assert!((spike.t - 0.6).abs() < 1e-12 && spike.x == 0.0);
        let exit = b.hit_time(&[(0.0, 0.9), (0.1, 1.1)]).unwrap();
        assert!((exit.t - 0.05).abs() < 1e-12 && exit.x == 1.0);
        let left = b.hit_time(&[(0.0, -0.9), (0.1, -1.3)]).unwrap();
        assert_eq!(left.x, -1.0);
    }

    #[test]
    fn interpolation_modes() {
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let b =
            RootBarrier::new(xs, vec![0.0, 2.0, f64::INFINITY, 0.0], Provenance::Manual).unwrap();
        assert_eq!(b.value_at(0.5), 1.0);
        assert_eq!(b.value_at(1.5), f64::INFINITY);
        let c = b.clone().with_interpolation(Interpolation::Conservative);
        assert_eq!(c.value_at(0.5), 0.0);
        assert_eq!(c.value_at(1.5), 2.0);
        assert_eq!(b.value_at(-3.0), 0.0);
    }

    #[test]
    fn regularize_examples() {
        let q = q00();
        assert_eq!(regularize(&q, &[]).unwrap(), q);
        let contact: Vec<f64> = q
            .xs()
            .iter()
            .copied()
            .filter(|x| x.abs() <= 1.0 + 1e-9)
            .collect();
        let r = regularize(&q, &contact).unwrap();
        for (&x, &f) in r.xs().iter().zip(r.f()) {
            let expect_zero = x.abs() <= 1.0 + 1e-9 || x.abs() >= 3.0 - 1e-9;
            assert_eq!(f == 0.0, expect_zero, "x={x}");
        }
        assert_eq!(regularize(&r, &contact).unwrap(), r);
        assert!(matches!(
            regularize(&q, &[0.123]),
            Err(BarrierError::ContactOffGrid(_))
        ));
    }

    #[test]
    fn combine_examples() {
        let q = q00();
        let contact: Vec<f64> = q.xs().iter().copied().filter(|x| x.abs() <= 1.0).collect();
        let r = regularize(&q, &contact).unwrap();
        assert_eq!(combine(&q, &q, CombineMode::Union).unwrap().f(), q.f());
        assert_eq!(combine(&q, &r, CombineMode::Union).unwrap().f(), r.f());
        assert_eq!(
            combine(&q, &r, CombineMode::Intersection).unwrap().f(),
            q.f()
        );
        let other = RootBarrier::vertical(linspace(-4.0, 4.0, 11), 1.0).unwrap();
        assert!(matches!(
            combine(&q, &other, CombineMode::Union),
            Err(BarrierError::GridMismatch)
        ));
    }

    #[test]
    fn distance_examples() {
        let q = q00();
        assert_eq!(barrier_distance(&q, &q), 0.0);
        let xs = linspace(-1.0, 1.0, 11);
        let zero = RootBarrier::new(xs.clone(), vec![0.0; 11], Provenance::Manual).unwrap();
        let mut f = vec![0.0; 11];
        f[5] = f64::INFINITY;
        let hole = RootBarrier::new(xs, f, Provenance::Manual).unwrap();
        let d = barrier_distance(&zero, &hole);
        assert!(d > 0.0 && d <= 2f64.sqrt(), "{d}");
    }

    #[test]
    fn csv_round_trip_with_inf() {
        let q = q00();
        let path = std::env::temp_dir().join(format!("barrier-{}.csv", std::process::id()));
        q.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,f\n") && text.contains(",inf"));
        let back = RootBarrier::read_csv(&path, Provenance::Manual).unwrap();
        assert_eq!(back.f(), q.f());
        std::fs::remove_file(path).ok();
    }
}
