//! Diffusion coefficients `σ(t, x)`.

use std::fmt;
use std::sync::Arc;

type SigmaFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A diffusion coefficient. `Identity` is `σ(x) = x`, the geometric
/// Brownian motion case.
#[derive(Clone)]
pub enum Sigma {
    Constant(f64),
    Identity,
    Custom {
        label: String,
        time_homogeneous: bool,
        f: Arc<SigmaFn>,
    },
}

impl Sigma {
    pub fn custom(
        label: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Sigma::Custom {
            label: label.into(),
            time_homogeneous: false,
            f: Arc::new(f),
        }
    }

    pub fn custom_homogeneous(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Sigma::Custom {
            label: label.into(),
            time_homogeneous: true,
            f: Arc::new(move |_, x| f(x)),
        }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Sigma::Constant(s) => *s,
            Sigma::Identity => x,
            Sigma::Custom { f, .. } => f(t, x),
        }
    }

    pub fn is_time_homogeneous(&self) -> bool {
        match self {
            Sigma::Custom {
                time_homogeneous, ..
            } => *time_homogeneous,
            _ => true,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Sigma::Constant(s) => format!("constant({s})"),
            Sigma::Identity => "identity".to_string(),
            Sigma::Custom { label, .. } => label.clone(),
        }
    }

    /// Time-reversed coefficient `(s, y) ↦ σ(t - s, y)`.
    pub fn reversed(&self, t: f64) -> Sigma {
        if self.is_time_homogeneous() {
            return self.clone();
        }
        let inner = self.clone();
        Sigma::Custom {
            label: format!("{}@reversed({t})", self.label()),
            time_homogeneous: false,
            f: Arc::new(move |s, y| inner.eval(t - s, y)),
        }
    }
}

impl fmt::Debug for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for Sigma {
    type Err = String;

    /// Accepts `identity`, `gbm`, a number, or `constant(<number>)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "identity" | "gbm" => return Ok(Sigma::Identity),
            _ => {}
        }
        let num = s
            .strip_prefix("constant(")
            .and_then(|r| r.strip_suffix(')'))
            .unwrap_or(s);
        num.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Sigma::Constant)
            .ok_or_else(|| format!("unrecognized sigma '{s}'"))
    }
}
