//! Randomized invariants shared by the property suite and the acceptance run.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use root_barrier::approx::atomic_approximation;
use root_barrier::barrier::{combine, regularize, CombineMode, Provenance, RootBarrier};
use root_barrier::embed_mc::embedding_distance;
use root_barrier::measures::{convex_order_check, linspace, ConvexOrder, ProbabilityMeasure};
use root_barrier::obstacle_pde::{
    solve_heat, solve_obstacle, solve_penalized, solve_with_initial, Grid, PdeSolution, Scheme,
    SolveOptions,
};
use root_barrier::Sigma;

const TOL: f64 = 1e-12;

/// Cases per invariant.
pub const CASES: u32 = 100;

pub fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

fn grid() -> Grid {
    Grid::with_cfl_ratio(-2.5, 2.5, 29, 0.5, 1.0, 0.4).unwrap()
}

/// An atomic law and a mean-preserving spread of it, so that `μ ≤cx ν`.
fn ordered_pair() -> impl Strategy<Value = (ProbabilityMeasure, ProbabilityMeasure)> {
    prop::collection::vec((-1.0..1.0f64, 0.1..1.0f64, 0.0..0.8f64, 0.0..0.8f64), 1..4).prop_map(
        |atoms| {
            let total: f64 = atoms.iter().map(|a| a.1).sum();
            let mut mu = Vec::new();
            let mut nu = Vec::new();
            for (x, w, l, r) in atoms {
                let p = w / total;
                mu.push((x, p));
                if l + r < 1e-3 {
                    nu.push((x, p));
                } else {
                    nu.push((x - l, p * r / (l + r)));
                    nu.push((x + r, p * l / (l + r)));
                }
            }
            nu.retain(|a| a.1 > 0.0);
            (
                ProbabilityMeasure::atomic(mu).unwrap(),
                ProbabilityMeasure::atomic(nu).unwrap(),
            )
        },
    )
}

fn barrier_on(xs: Vec<f64>, raw: Vec<Option<f64>>) -> RootBarrier {
    let mut f: Vec<f64> = raw
        .into_iter()
        .map(|v| v.unwrap_or(f64::INFINITY))
        .collect();
    let n = f.len();
    f[0] = 0.0;
    f[n - 1] = 0.0;
    RootBarrier::new(xs, f, Provenance::Manual).unwrap()
}

fn barrier_values(n: usize) -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::weighted(0.8, 0.0..2.0f64), n)
}

fn solve(mu: &ProbabilityMeasure, nu: &ProbabilityMeasure) -> PdeSolution {
    solve_obstacle(
        &Sigma::Constant(1.0),
        mu,
        nu,
        &grid(),
        &SolveOptions::default(),
    )
    .unwrap()
}

pub fn obstacle_solution_is_sandwiched(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&ordered_pair(), |(mu, nu)| {
            let sol = solve(&mu, &nu);
            for row in sol.rows() {
                for (&x, &u) in sol.xs().iter().zip(row) {
                    prop_assert!(nu.potential(x) <= u + TOL);
                    prop_assert!(u <= mu.potential(x) + TOL);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn obstacle_solution_decreases_in_time(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&ordered_pair(), |(mu, nu)| {
            let sol = solve(&mu, &nu);
            let rows: Vec<&[f64]> = sol.rows().collect();
            for w in rows.windows(2) {
                for (a, b) in w[0].iter().zip(w[1]) {
                    prop_assert!(b <= &(a + TOL));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn obstacle_solution_is_one_lipschitz(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&ordered_pair(), |(mu, nu)| {
            let sol = solve(&mu, &nu);
            let dx = sol.grid.dx;
            for row in sol.rows() {
                for w in row.windows(2) {
                    prop_assert!((w[1] - w[0]).abs() <= dx * (1.0 + 1e-9));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn comparison_in_initial_data(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(ordered_pair(), prop::collection::vec(0.0..0.5f64, 31)),
            |((mu, nu), bump)| {
                let g = grid();
                let xs = g.xs();
                let obstacle: Vec<f64> = xs.iter().map(|&x| nu.potential(x)).collect();
                let low: Vec<f64> = xs.iter().map(|&x| mu.potential(x)).collect();
                let high: Vec<f64> = low.iter().zip(&bump).map(|(u, b)| u + b).collect();
                let opts = SolveOptions::default();
                let s = Sigma::Constant(1.0);
                let a = solve_with_initial(
                    &g,
                    &s,
                    low,
                    Scheme::Obstacle {
                        obstacle: obstacle.clone(),
                    },
                    &opts,
                )
                .unwrap();
                let b =
                    solve_with_initial(&g, &s, high, Scheme::Obstacle { obstacle }, &opts).unwrap();
                for (ra, rb) in a.rows().zip(b.rows()) {
                    for (u, v) in ra.iter().zip(rb) {
                        prop_assert!(u <= &(v + TOL));
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn penalization_increases_towards_obstacle_solution(
    runner: &mut TestRunner,
) -> Result<(), String> {
    runner
        .run(
            &(ordered_pair(), 0.0..20.0f64, 0.0..20.0f64),
            |((mu, nu), n1, dn)| {
                let g = grid();
                let s = Sigma::Constant(1.0);
                let opts = SolveOptions::default();
                let h = |x: f64| nu.potential(x);
                let p1 = solve_penalized(&s, &mu, h, &g, n1, &opts).unwrap();
                let p2 = solve_penalized(&s, &mu, h, &g, n1 + dn, &opts).unwrap();
                let full = solve(&mu, &nu);
                for ((r1, r2), rf) in p1.rows().zip(p2.rows()).zip(full.rows()) {
                    for ((a, b), c) in r1.iter().zip(r2).zip(rf) {
                        prop_assert!(a <= &(b + TOL));
                        prop_assert!(b <= &(c + TOL));
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn heat_solution_lies_below_obstacle_solution(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&ordered_pair(), |(mu, nu)| {
            let heat = solve_heat(
                &Sigma::Constant(1.0),
                &mu,
                &grid(),
                &SolveOptions::default(),
            )
            .unwrap();
            let full = solve(&mu, &nu);
            for (rh, rf) in heat.rows().zip(full.rows()) {
                for (a, b) in rh.iter().zip(rf) {
                    prop_assert!(a <= &(b + TOL));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn regularize_is_idempotent(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(barrier_values(12), prop::collection::vec(any::<bool>(), 12)),
            |(raw, pick)| {
                let xs = linspace(-1.0, 1.0, 12);
                let b = barrier_on(xs.clone(), raw);
                let contact: Vec<f64> = xs
                    .iter()
                    .zip(&pick)
                    .filter(|p| *p.1)
                    .map(|p| *p.0)
                    .collect();
                let once = regularize(&b, &contact).unwrap();
                let twice = regularize(&once, &contact).unwrap();
                prop_assert_eq!(once.f(), twice.f());
                for (x, f) in once.xs().iter().zip(once.f()) {
                    if contact.contains(x) {
                        prop_assert_eq!(*f, 0.0);
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn combine_algebra(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(barrier_values(9), barrier_values(9), barrier_values(9)),
            |(r1, r2, r3)| {
                let xs = linspace(-2.0, 2.0, 9);
                let (a, b, c) = (
                    barrier_on(xs.clone(), r1),
                    barrier_on(xs.clone(), r2),
                    barrier_on(xs, r3),
                );
                let f = |x: &RootBarrier, y: &RootBarrier, mode| {
                    combine(x, y, mode).unwrap().f().to_vec()
                };
                for mode in [CombineMode::Union, CombineMode::Intersection] {
                    prop_assert_eq!(f(&a, &b, mode), f(&b, &a, mode));
                    prop_assert_eq!(f(&a, &a, mode), a.f().to_vec());
                    let ab = combine(&a, &b, mode).unwrap();
                    let bc = combine(&b, &c, mode).unwrap();
                    prop_assert_eq!(f(&ab, &c, mode), f(&a, &bc, mode));
                }
                let union = combine(&a, &b, CombineMode::Union).unwrap();
                let inter = combine(&a, &b, CombineMode::Intersection).unwrap();
                prop_assert_eq!(f(&a, &union, CombineMode::Intersection), a.f().to_vec());
                prop_assert_eq!(f(&a, &inter, CombineMode::Union), a.f().to_vec());
                for ((u, i), (fa, fb)) in
                    union.f().iter().zip(inter.f()).zip(a.f().iter().zip(b.f()))
                {
                    prop_assert!(u <= fa && u <= fb && i >= fa && i >= fb);
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn cursor_stepping_matches_segment_search(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(
                barrier_values(15),
                prop::collection::vec(-0.4..0.4f64, 1..60),
            ),
            |(raw, steps)| {
                let b = barrier_on(linspace(-1.5, 1.5, 15), raw);
                let (mut t, mut x) = (0.0, 0.0);
                let mut cell = b.cell_of(x);
                for (k, dx) in steps.into_iter().enumerate() {
                    let t1 = 0.05 * (k + 1) as f64;
                    let x1 = x + dx;
                    let expected = b.segment_hit(t, x, t1, x1);
                    prop_assert_eq!(b.step(&mut cell, t, x, t1, x1), expected);
                    prop_assert_eq!(cell, b.cell_of(x1));
                    if expected.is_some() {
                        break;
                    }
                    t = t1;
                    x = x1;
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn uniform_lookup_matches_reference_interpolation(
    runner: &mut TestRunner,
) -> Result<(), String> {
    runner
        .run(&(barrier_values(11), -1.5..1.5f64), |(raw, x)| {
            let xs = linspace(-1.0, 1.0, 11);
            let b = barrier_on(xs.clone(), raw);
            let f = b.f();
            // Reference: 0 on and beyond the end columns, linear inside, ∞ if either end is ∞.
            let expected = if x <= xs[0] || x >= xs[10] {
                0.0
            } else {
                let i = xs.iter().rposition(|&c| c <= x).unwrap();
                if x == xs[i] {
                    f[i]
                } else if f[i].is_infinite() || f[i + 1].is_infinite() {
                    f64::INFINITY
                } else {
                    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
                    f[i] + (f[i + 1] - f[i]) * w
                }
            };
            let got = b.value_at(x);
            prop_assert!(
                got == expected || (got - expected).abs() <= 1e-12,
                "{} vs {}",
                got,
                expected
            );
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn potentials_are_concave_and_lipschitz(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(ordered_pair(), -3.0..3.0f64, 1e-3..1.0f64),
            |((mu, _), a, h)| {
                let (l, c, r) = (mu.potential(a - h), mu.potential(a), mu.potential(a + h));
                prop_assert!(l + r <= 2.0 * c + 1e-12);
                prop_assert!((r - c).abs() <= h + 1e-12);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn convex_order_orders_second_moments(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&ordered_pair(), |(mu, nu)| {
            let grid = linspace(-3.0, 3.0, 200);
            prop_assert_eq!(
                convex_order_check(&mu, &nu, &grid).unwrap(),
                ConvexOrder::Ordered
            );
            prop_assert!(mu.second_moment() <= nu.second_moment() + 1e-12);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn embedding_distance_is_a_pseudometric(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(
                prop::collection::vec(-2.0..2.0f64, 1..40),
                prop::collection::vec(-2.0..2.0f64, 1..40),
            ),
            |(xs, ys)| {
                let grid = linspace(-3.0, 3.0, 100);
                let law_x = ProbabilityMeasure::empirical(xs.clone()).unwrap();
                let law_y = ProbabilityMeasure::empirical(ys.clone()).unwrap();
                prop_assert_eq!(embedding_distance(&xs, &law_x, &grid).unwrap(), 0.0);
                let dxy = embedding_distance(&xs, &law_y, &grid).unwrap();
                let dyx = embedding_distance(&ys, &law_x, &grid).unwrap();
                prop_assert!((dxy - dyx).abs() <= 1e-12);
                let g = ProbabilityMeasure::gaussian(0.0, 1.0).unwrap();
                let via = embedding_distance(&xs, &g, &grid).unwrap()
                    + embedding_distance(&ys, &g, &grid).unwrap();
                prop_assert!(dxy <= via + 1e-12);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn atomic_approximation_is_sandwiched(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(ordered_pair(), 2usize..40, 0.5..3.0f64),
            |((mu, nu), k, n)| {
                let a = atomic_approximation(&mu, &nu, n, k).unwrap();
                prop_assert!((a.measure.mean() - mu.mean()).abs() < 1e-9);
                for x in linspace(-4.0, 4.0, 500) {
                    let u = a.measure.potential(x);
                    prop_assert!(nu.potential(x) <= u + 1e-9);
                    prop_assert!(u <= mu.potential(x) + 1e-9);
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

#[allow(dead_code)]
pub type Suite = (&'static str, fn(&mut TestRunner) -> Result<(), String>);

#[allow(dead_code)]
pub const SUITES: &[Suite] = &[
    (
        "obstacle_solution_is_sandwiched",
        obstacle_solution_is_sandwiched,
    ),
    (
        "obstacle_solution_decreases_in_time",
        obstacle_solution_decreases_in_time,
    ),
    (
        "obstacle_solution_is_one_lipschitz",
        obstacle_solution_is_one_lipschitz,
    ),
    ("comparison_in_initial_data", comparison_in_initial_data),
    (
        "penalization_increases_towards_obstacle_solution",
        penalization_increases_towards_obstacle_solution,
    ),
    (
        "heat_solution_lies_below_obstacle_solution",
        heat_solution_lies_below_obstacle_solution,
    ),
    ("regularize_is_idempotent", regularize_is_idempotent),
    ("combine_algebra", combine_algebra),
    (
        "cursor_stepping_matches_segment_search",
        cursor_stepping_matches_segment_search,
    ),
    (
        "uniform_lookup_matches_reference_interpolation",
        uniform_lookup_matches_reference_interpolation,
    ),
    (
        "potentials_are_concave_and_lipschitz",
        potentials_are_concave_and_lipschitz,
    ),
    (
        "convex_order_orders_second_moments",
        convex_order_orders_second_moments,
    ),
    (
        "embedding_distance_is_a_pseudometric",
        embedding_distance_is_a_pseudometric,
    ),
    (
        "atomic_approximation_is_sandwiched",
        atomic_approximation_is_sandwiched,
    ),
];
