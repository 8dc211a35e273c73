//! Regression Monte Carlo for the zero-driver reflected BSDE, used as an
//! independent oracle for the obstacle PDE.
//!
//! For a query `(t, x)` the diffusion runs forward from `x` for time `t`
//! under the reversed coefficient `σ̄(s, y) = σ(t - s, y)`. Backward,
//! `Y_n = u0(X_n)` and `Y_j = max(h(X_j), C_j)`, where `C_j` is the least
//! squares projection on polynomials in the standardized `X_j` of the
//! realized cashflow: `h` at the first step where `h ≥ C`, else `u0(X_n)`.
//! Regressing cashflows rather than the fitted `Y_{j+1}` keeps regression
//! error out of the values, so the estimate carries only the small low bias
//! of a suboptimal stopping rule. Each query gets its own cloud, so `Y_0` at
//! the common start point is the estimate of the PDE value `u(t, x)`.

use crate::sigma::Sigma;
use nalgebra::{Cholesky, Matrix5, Vector5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest supported polynomial degree.
pub const MAX_BASIS: usize = 4;

#[derive(Debug, Error)]
pub enum RfbsdeError {
    #[error("RegressionSingular: design matrix is degenerate at step {step}")]
    RegressionSingular { step: usize },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RfbsdeConfig {
    #[serde(rename = "T")]
    pub t_max: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    /// Polynomial degree of the regression basis, `1..=MAX_BASIS`.
    pub basis: usize,
    pub seed: u64,
}

impl RfbsdeConfig {
    fn validate(&self) -> Result<(), RfbsdeError> {
        if self.n_steps < 2 {
            return Err(RfbsdeError::InvalidConfig(format!(
                "n_steps = {} < 2",
                self.n_steps
            )));
        }
        if !(1..=MAX_BASIS).contains(&self.basis) {
            return Err(RfbsdeError::InvalidConfig(format!(
                "basis degree {} outside 1..={MAX_BASIS}",
                self.basis
            )));
        }
        if self.n_paths < 2 * (self.basis + 1) {
            return Err(RfbsdeError::InvalidConfig(format!(
                "{} paths cannot fit the basis",
                self.n_paths
            )));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(RfbsdeError::InvalidConfig(format!(
                "horizon {} must be positive",
                self.t_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryValue {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Standard error of the pathwise value along the estimated stopping rule.
    pub stderr: f64,
    /// Path average of the trapezoidal `Σ (Y - h) ΔK`.
    pub skorokhod: f64,
    /// Smallest `Y - h` over all retained steps and paths.
    pub min_reflection_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SnellRun {
    pub config: RfbsdeConfig,
    pub values: Vec<QueryValue>,
}

/// Estimates the PDE value at each query point.
pub fn snell_envelope(
    sigma: &Sigma,
    u0: &(dyn Fn(f64) -> f64 + Sync),
    h: &(dyn Fn(f64) -> f64 + Sync),
    cfg: &RfbsdeConfig,
    queries: &[(f64, f64)],
) -> Result<SnellRun, RfbsdeError> {
    cfg.validate()?;
    let values = queries
        .iter()
        .enumerate()
        .map(|(q, &(t, x))| {
            if !(0.0..=cfg.t_max).contains(&t) || !x.is_finite() {
                return Err(RfbsdeError::InvalidConfig(format!(
                    "query ({t}, {x}) outside [0, {}] x R",
                    cfg.t_max
                )));
            }
            if t == 0.0 {
                let y = u0(x);
                let gap = y - h(x);
                return Ok(QueryValue {
                    t,
                    x,
                    y,
                    stderr: 0.0,
                    skorokhod: 0.0,
                    min_reflection_gap: gap,
                });
            }
            let cloud = forward_cloud(&sigma.reversed(t), x, t, cfg, q as u64);
            backward(&cloud, u0, h, cfg).map(|b| QueryValue { t, x, ..b })
        })
        .collect::<Result<_, _>>()?;
    Ok(SnellRun {
        config: cfg.clone(),
        values,
    })
}

/// Worst path-averaged `Σ (Y - h) ΔK` over the queries of a run.
pub fn skorokhod_condition_check(run: &SnellRun) -> f64 {
    run.values.iter().map(|v| v.skorokhod).fold(0.0, f64::max)
}

/// `cloud[j][i]` is path `i` at step `j`.
fn forward_cloud(sigma: &Sigma, x: f64, t: f64, cfg: &RfbsdeConfig, query: u64) -> Vec<Vec<f64>> {
    let n = cfg.n_steps;
    let dt = t / n as f64;
    let sqdt = dt.sqrt();
    let paths: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((query << 32) | i as u64);
            let mut path = Vec::with_capacity(n + 1);
            let mut y = x;
            path.push(y);
            for j in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                y += sigma.eval(j as f64 * dt, y) * sqdt * z;
                path.push(y);
            }
            path
        })
        .collect();
    (0..=n)
        .map(|j| paths.iter().map(|p| p[j]).collect())
        .collect()
}

fn backward(
    cloud: &[Vec<f64>],
    u0: &(dyn Fn(f64) -> f64 + Sync),
    h: &(dyn Fn(f64) -> f64 + Sync),
    cfg: &RfbsdeConfig,
) -> Result<QueryValue, RfbsdeError> {
    let n = cfg.n_steps;
    let m = cfg.n_paths;
    let mut y: Vec<f64> = cloud[n].iter().map(|&x| u0(x)).collect();
    let mut h_next: Vec<f64> = cloud[n].iter().map(|&x| h(x)).collect();
    let mut pathwise = y.clone();
    let mut skorokhod = vec![0.0; m];
    let mut min_gap = y
        .iter()
        .zip(&h_next)
        .map(|(a, b)| a - b)
        .fold(f64::INFINITY, f64::min);
    for j in (0..n).rev() {
        let xs = &cloud[j];
        let cont = if j == 0 {
            vec![pathwise.iter().sum::<f64>() / m as f64; m]
        } else {
            regress(xs, &pathwise, cfg.basis).ok_or(RfbsdeError::RegressionSingular { step: j })?
        };
        let mut h_now = Vec::with_capacity(m);
        for i in 0..m {
            let hi = h(xs[i]);
            let dk = (hi - cont[i]).max(0.0);
            let yi = hi.max(cont[i]);
            if dk > 0.0 {
                skorokhod[i] += 0.5 * ((yi - hi) + (y[i] - h_next[i])) * dk;
            }
            if hi >= cont[i] {
                pathwise[i] = hi;
            }
            min_gap = min_gap.min(yi - hi);
            y[i] = yi;
            h_now.push(hi);
        }
        h_next = h_now;
    }
    let est = mean_stderr(&pathwise);
    Ok(QueryValue {
        t: 0.0,
        x: cloud[0][0],
        y: y[0],
        stderr: est.1,
        skorokhod: skorokhod.iter().sum::<f64>() / m as f64,
        min_reflection_gap: min_gap,
    })
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Fitted values of the least-squares projection of `y` on `1, z, …, z^deg`,
/// `z` being `xs` standardized. `None` when the normal equations are singular.
fn regress(xs: &[f64], y: &[f64], deg: usize) -> Option<Vec<f64>> {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m).sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return None;
    }
    let powers = |x: f64| {
        let z = (x - mean) / sd;
        let mut p = Vector5::zeros();
        let mut acc = 1.0;
        for k in 0..=deg {
            p[k] = acc;
            acc *= z;
        }
        p
    };
    let mut a = Matrix5::zeros();
    let mut b = Vector5::zeros();
    for (&x, &yi) in xs.iter().zip(y) {
        let p = powers(x);
        a += p * p.transpose();
        b += p * yi;
    }
    // Unused degrees get a unit diagonal so the 5x5 system stays definite.
    for k in deg + 1..=MAX_BASIS {
        a[(k, k)] = 1.0;
    }
    let coef = Cholesky::new(a)?.solve(&b);
    Some(xs.iter().map(|&x| powers(x).dot(&coef)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_paths: usize) -> RfbsdeConfig {
        RfbsdeConfig {
            t_max: 2.0,
            n_steps: 20,
            n_paths,
            basis: 4,
            seed: 7,
        }
    }

    #[test]
    fn heat_without_obstacle() {
        let run = snell_envelope(
            &Sigma::Constant(1.0),
            &|x: f64| -x.abs(),
            &|_| f64::NEG_INFINITY,
            &cfg(20_000),
            &[(2.0, 0.0)],
        )
        .unwrap();
        let v = &run.values[0];
        let oracle = -(2.0 * 2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (v.y - oracle).abs() <= 3.0 * v.stderr,
            "{} vs {oracle} ± {}",
            v.y,
            v.stderr
        );
        assert_eq!(skorokhod_condition_check(&run), 0.0);
    }

    #[test]
    fn obstacle_equal_to_payoff_binds() {
        let f = |x: f64| -(1.0 + x * x).sqrt();
        let qs = [(0.5, 0.0), (1.0, 0.3), (2.0, -1.0)];
        let run = snell_envelope(&Sigma::Constant(1.0), &f, &f, &cfg(2_000), &qs).unwrap();
        for v in &run.values {
            assert!((v.y - f(v.x)).abs() < 1e-12);
            assert!(v.min_reflection_gap >= 0.0);
        }
        // Regression overshoot away from the start point leaves Y above h on a few paths.
        assert!(skorokhod_condition_check(&run) < 1e-3);
    }

    #[test]
    fn reflection_holds_and_obstacle_order() {
        let u0 = |x: f64| -x.abs();
        let low = |x: f64| -(0.5 + x.abs());
        let high = |x: f64| -(0.25 + x.abs());
        let qs = [(1.0, 0.0), (0.5, 0.4)];
        let a = snell_envelope(&Sigma::Constant(1.0), &u0, &low, &cfg(5_000), &qs).unwrap();
        let b = snell_envelope(&Sigma::Constant(1.0), &u0, &high, &cfg(5_000), &qs).unwrap();
        for (va, vb) in a.values.iter().zip(&b.values) {
            assert!(va.min_reflection_gap >= 0.0 && vb.min_reflection_gap >= 0.0);
            assert!(vb.y >= va.y - 3.0 * (va.stderr + vb.stderr));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let f = |x: f64| -x.abs();
        let mut c = cfg(100);
        c.n_steps = 1;
        assert!(snell_envelope(&Sigma::Constant(1.0), &f, &f, &c, &[]).is_err());
        let c = cfg(100);
        assert!(snell_envelope(&Sigma::Constant(1.0), &f, &f, &c, &[(3.0, 0.0)]).is_err());
    }

    #[test]
    fn degenerate_cloud_is_singular() {
        assert!(regress(&[1.0; 50], &[0.0; 50], 2).is_none());
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit = regress(
            &xs,
            &xs.iter().map(|x| 2.0 * x + 1.0).collect::<Vec<_>>(),
            1,
        )
        .unwrap();
        assert!((fit[10] - 21.0).abs() < 1e-9);
    }
}
