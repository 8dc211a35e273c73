//! Root's solution of the Skorokhod embedding problem via a parabolic
//! obstacle problem, with Monte Carlo and reflected-BSDE cross-checks and
//! model-independent bounds on variance options.

pub mod approx;
pub mod barrier;
pub mod embed_mc;
pub mod measures;
pub mod obstacle_pde;
pub mod pricing;
pub mod rfbsde;
pub mod sigma;

pub use approx::{atomic_approximation, ApproxError, AtomicApproximation};
pub use barrier::{BarrierError, CombineMode, Hit, Interpolation, Provenance, RootBarrier};
pub use measures::{ConvexOrder, MeasureError, ProbabilityMeasure};
pub use obstacle_pde::{Grid, PdeError, PdeKind, PdeSolution, Scheme, SolveOptions};
pub use sigma::Sigma;
