//! Adaptive Gauss–Kronrod (7/15) quadrature.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 50;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (val, err) = gk15(f, a, b);
    if err <= tol.max(1e-15 * val.abs()) || depth >= MAX_DEPTH {
        return val;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth + 1) + adapt(f, m, b, 0.5 * tol, depth + 1)
}

/// `∫_a^b f` to absolute tolerance `tol`. Either bound may be infinite.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    integrate_dyn(&f, a, b, tol)
}

fn integrate_dyn(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a > b {
        return -integrate_dyn(f, b, a, tol);
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adapt(&f, a, b, tol, 0),
        // y = a + t/(1-t), t ∈ [0,1)
        (true, false) => adapt(
            &|t: f64| {
                if t >= 1.0 {
                    return 0.0;
                }
                let s = 1.0 - t;
                f(a + t / s) / (s * s)
            },
            0.0,
            1.0,
            tol,
            0,
        ),
        (false, true) => integrate_dyn(&|y| f(-y), -b, f64::INFINITY, tol),
        (false, false) => {
            integrate_dyn(f, f64::NEG_INFINITY, 0.0, 0.5 * tol)
                + integrate_dyn(f, 0.0, f64::INFINITY, 0.5 * tol)
        }
    }
}

/// `-∫|x - y| ρ(y) dy` over `support`, split at the kink `y = x`.
pub fn potential_from_density<F: Fn(f64) -> f64>(
    density: F,
    support: (f64, f64),
    x: f64,
    tol: f64,
) -> f64 {
    let (lo, hi) = support;
    let g = |y: f64| (x - y).abs() * density(y);
    if x <= lo || x >= hi {
        return -integrate(g, lo, hi, tol);
    }
    -(integrate(&g, lo, x, 0.5 * tol) + integrate(&g, x, hi, 0.5 * tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_exponentials() {
        assert!((integrate(|x| x * x, 0.0, 3.0, 1e-12) - 9.0).abs() < 1e-12);
        assert!((integrate(|x: f64| (-x).exp(), 0.0, f64::INFINITY, 1e-12) - 1.0).abs() < 1e-10);
        let g = integrate(
            |x: f64| (-x * x).exp(),
            f64::NEG_INFINITY,
            f64::INFINITY,
            1e-12,
        );
        assert!((g - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        assert_eq!(integrate(|x| x, 2.0, 0.0, 1e-12), -2.0);
    }

    #[test]
    fn kink_split_is_exact_for_uniform() {
        let v = potential_from_density(|_| 1.0, (0.0, 1.0), 0.3, 1e-12);
        assert!((v + (0.09 + 0.49) / 2.0).abs() < 1e-14);
    }
}
