//! Finitely supported approximations of a target law, sandwiched in convex
//! order between an atomic initial law and the target.
//!
//! On the window `[m - N, m + N]` (`m` the common mean) the approximating
//! potential is the lower envelope of three families of lines: the linear
//! pieces of `u_μ`, tangents to `u_ν` at the `ν`-quantiles `j / (k + 1)`,
//! and the two supporting lines of `u_ν` through the pins
//! `(m ± N, u_μ(m ± N))`. Outside the window it equals `u_μ`. Every line
//! dominates `u_ν` on the window and none passes below a pin, so the result
//! is a concave, piecewise linear potential between `u_ν` and `u_μ`.

use crate::measures::{
    convex_order_check, linspace, ConvexOrder, MeasureError, ProbabilityMeasure,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("OrderViolation: u_mu < u_nu at x = {witness}")]
    OrderViolation { witness: f64 },
    #[error("Invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// A line `x ↦ slope · x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

impl Line {
    fn through(x: f64, y: f64, slope: f64) -> Self {
        Self {
            slope,
            intercept: y - slope * x,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Abscissa where `self` and `other` meet. Slopes must differ.
    fn meet(&self, other: &Line) -> f64 {
        (other.intercept - self.intercept) / (self.slope - other.slope)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AtomicApproximation {
    pub measure: ProbabilityMeasure,
    pub window: (f64, f64),
    /// Envelope lines active on the window, left to right.
    pub lines: Vec<Line>,
}

/// Atomic `ν_N` with `μ ≤cx ν_N ≤cx ν` and `ν_N = μ` off `[m - N, m + N]`.
///
/// `mu` must be atomic so that the envelope stays piecewise linear. For
/// atomic `nu` both one-sided tangents are used at each quantile atom,
/// so `k` at least the number of atoms reproduces a target supported in
/// the window.
pub fn atomic_approximation(
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    n: f64,
    k: usize,
) -> Result<AtomicApproximation, ApproxError> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(ApproxError::Invalid(format!(
            "window half-width must be positive, got {n}"
        )));
    }
    if k < 2 {
        return Err(ApproxError::Invalid(format!(
            "need at least 2 tangent lines, got {k}"
        )));
    }
    let mu_pieces = mu
        .potential_fn()
        .pieces()
        .ok_or_else(|| ApproxError::Invalid("initial law must be atomic".into()))?;
    let m = mu.mean();
    let (lo, hi) = (m - n, m + n);
    let check_grid = linspace(lo - n, hi + n, 501);
    if let ConvexOrder::NotOrdered { witness } = convex_order_check(mu, nu, &check_grid)? {
        return Err(ApproxError::OrderViolation { witness });
    }

    let mut lines = Vec::with_capacity(mu_pieces.len() + 2 * k + 3);
    let first = mu_pieces[0].0;
    lines.push(Line::through(first, mu.potential(first), 1.0));
    for &(x, s) in &mu_pieces {
        lines.push(Line::through(x, mu.potential(x), s));
    }
    let (u_lo, u_hi) = (mu.potential(lo), mu.potential(hi));
    // Lines below u_μ at a pin would break continuity with u_μ outside the window.
    let clears_pins = |l: &Line| {
        l.eval(lo) >= u_lo - 1e-12 * (1.0 + u_lo.abs())
            && l.eval(hi) >= u_hi - 1e-12 * (1.0 + u_hi.abs())
    };
    let left = pin_line(nu, lo, u_lo, Side::Right);
    let right = pin_line(nu, hi, u_hi, Side::Left);
    let mut chord_needed = false;
    for pin in [left, right] {
        if clears_pins(&pin) {
            lines.push(pin);
        } else {
            // The chord lies above this pin line on the window, hence above u_ν.
            chord_needed = true;
        }
    }
    if chord_needed {
        lines.push(Line::through(lo, u_lo, (u_hi - u_lo) / (hi - lo)));
    }
    for j in 1..=k {
        let q = nu.quantile(j as f64 / (k + 1) as f64);
        let u = nu.potential(q);
        for slope in [
            nu.potential_left_derivative(q),
            nu.potential_right_derivative(q),
        ] {
            let tangent = Line::through(q, u, slope);
            if clears_pins(&tangent) {
                lines.push(tangent);
            }
        }
    }

    let hull = lower_envelope(lines, 0.5 * (lo + hi));
    let active = window_segments(&hull, lo, hi);

    // (breakpoint, slope to its right) for the whole potential.
    let mut kinks: Vec<(f64, f64)> = mu_pieces.iter().copied().filter(|&(x, _)| x < lo).collect();
    for &(x, line) in &active {
        kinks.push((x, line.slope));
    }
    kinks.push((hi, mu.potential_right_derivative(hi)));
    kinks.extend(mu_pieces.iter().copied().filter(|&(x, _)| x > hi));

    let mut atoms = Vec::with_capacity(kinks.len());
    let mut prev = 1.0;
    for (x, s) in kinks {
        let p = 0.5 * (prev - s);
        if p > 1e-15 {
            atoms.push((x, p));
        }
        prev = s;
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    for a in &mut atoms {
        a.1 /= total;
    }
    Ok(AtomicApproximation {
        measure: ProbabilityMeasure::atomic(atoms)?,
        window: (lo, hi),
        lines: active.into_iter().map(|(_, l)| l).collect(),
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Left,
    Right,
}

/// Supporting line of the concave `u_ν` through `(p, v)` with `v ≥ u_ν(p)`,
/// touching on the given side of `p`.
fn pin_line(nu: &ProbabilityMeasure, p: f64, v: f64, side: Side) -> Line {
    let gap = v - nu.potential(p);
    if gap <= 1e-12 * (1.0 + v.abs()) {
        let slope = match side {
            Side::Right => nu.potential_right_derivative(p),
            Side::Left => nu.potential_left_derivative(p),
        };
        return Line::through(p, v, slope);
    }
    let dir = if side == Side::Right { 1.0 } else { -1.0 };
    // Value at p of the tangent at c, minus v; monotone in the distance |c - p|.
    let phi = |c: f64| {
        let d = if side == Side::Right {
            nu.potential_right_derivative(c)
        } else {
            nu.potential_left_derivative(c)
        };
        nu.potential(c) + d * (p - c) - v
    };
    let mut near = p;
    let mut step = 1.0;
    let mut far = p + dir * step;
    while phi(far) < 0.0 && step < 1e12 {
        near = far;
        step *= 2.0;
        far = p + dir * step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (near + far);
        if mid == near || mid == far {
            break;
        }
        if phi(mid) < 0.0 {
            near = mid;
        } else {
            far = mid;
        }
    }
    Line::through(p, v, (nu.potential(far) - v) / (far - p))
}

/// Lines of the pointwise minimum, ordered left to right (slopes decreasing).
/// Slopes within `1e-12` are merged, keeping the lower line at `center`;
/// their meeting point would be pure rounding noise.
fn lower_envelope(mut lines: Vec<Line>, center: f64) -> Vec<Line> {
    lines.sort_by(|a, b| b.slope.total_cmp(&a.slope));
    let mut merged: Vec<Line> = Vec::with_capacity(lines.len());
    for l in lines {
        match merged.last_mut() {
            Some(last) if last.slope - l.slope <= 1e-12 => {
                if l.eval(center) < last.eval(center) {
                    *last = l;
                }
            }
            _ => merged.push(l),
        }
    }
    let lines = merged;
    let mut hull: Vec<Line> = Vec::with_capacity(lines.len());
    for l in lines {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if a.meet(&l) <= a.meet(&b) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(l);
    }
    hull
}

/// Start points and lines of the envelope pieces meeting `[lo, hi)`.
fn window_segments(hull: &[Line], lo: f64, hi: f64) -> Vec<(f64, Line)> {
    let mut out = Vec::new();
    for (i, &l) in hull.iter().enumerate() {
        let start = if i == 0 {
            f64::NEG_INFINITY
        } else {
            hull[i - 1].meet(&l)
        };
        let end = if i + 1 == hull.len() {
            f64::INFINITY
        } else {
            l.meet(&hull[i + 1])
        };
        if end <= lo || start >= hi {
            continue;
        }
        out.push((start.max(lo), l));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_point() -> ProbabilityMeasure {
        ProbabilityMeasure::atomic(vec![(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]).unwrap()
    }

    fn sup_gap(a: &ProbabilityMeasure, b: &ProbabilityMeasure, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| (a.potential(x) - b.potential(x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn atomic_target_in_window_is_reproduced() {
        let nu = three_point();
        let a = atomic_approximation(&ProbabilityMeasure::dirac(0.0), &nu, 4.0, 4).unwrap();
        let atoms = a.measure.atoms().unwrap();
        assert_eq!(atoms.locations(), &[-1.0, 0.0, 1.0]);
        for (p, q) in atoms.masses().iter().zip([0.25, 0.5, 0.25]) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_sandwich_and_moments() {
        let mu = ProbabilityMeasure::dirac(0.0);
        let nu = ProbabilityMeasure::gaussian(0.0, 1.0).unwrap();
        let a = atomic_approximation(&mu, &nu, 4.0, 8).unwrap();
        let m = &a.measure;
        let total: f64 = m.atoms().unwrap().masses().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(m.mean().abs() < 1e-9);
        for x in linspace(-4.0, 4.0, 200) {
            let u = m.potential(x);
            assert!(nu.potential(x) <= u + 1e-9, "below target at {x}");
            assert!(u <= mu.potential(x) + 1e-9, "above initial at {x}");
        }
    }

    #[test]
    fn refinement_is_monotone() {
        let mu = ProbabilityMeasure::dirac(0.0);
        let nu = ProbabilityMeasure::gaussian(0.0, 1.0).unwrap();
        let xs = linspace(-4.0, 4.0, 500);
        let gaps: Vec<f64> = [7, 15, 31, 63]
            .iter()
            .map(|&k| {
                sup_gap(
                    &atomic_approximation(&mu, &nu, 4.0, k).unwrap().measure,
                    &nu,
                    &xs,
                )
            })
            .collect();
        for w in gaps.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{gaps:?}");
        }
        assert!(gaps[3] < 0.01, "{gaps:?}");
    }

    #[test]
    fn outside_window_matches_initial_law() {
        let mu = ProbabilityMeasure::atomic(vec![(-0.5, 0.5), (0.5, 0.5)]).unwrap();
        let nu = ProbabilityMeasure::gaussian(0.0, 4.0).unwrap();
        let a = atomic_approximation(&mu, &nu, 1.5, 10).unwrap();
        for x in [-5.0, -2.0, -1.5, 1.5, 3.0] {
            assert!((a.measure.potential(x) - mu.potential(x)).abs() < 1e-9);
        }
        for x in linspace(-1.5, 1.5, 101) {
            let u = a.measure.potential(x);
            assert!(nu.potential(x) <= u + 1e-9 && u <= mu.potential(x) + 1e-9);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let nu = three_point();
        let wide = ProbabilityMeasure::atomic(vec![(-2.0, 0.5), (2.0, 0.5)]).unwrap();
        assert!(matches!(
            atomic_approximation(&wide, &nu, 4.0, 4),
            Err(ApproxError::OrderViolation { .. })
        ));
        let g = ProbabilityMeasure::gaussian(0.0, 0.5).unwrap();
        assert!(matches!(
            atomic_approximation(&g, &nu, 4.0, 4),
            Err(ApproxError::Invalid(_))
        ));
        let d = ProbabilityMeasure::dirac(0.0);
        assert!(matches!(
            atomic_approximation(&d, &nu, 0.0, 4),
            Err(ApproxError::Invalid(_))
        ));
        assert!(matches!(
            atomic_approximation(&d, &nu, 1.0, 1),
            Err(ApproxError::Invalid(_))
        ));
    }
}
