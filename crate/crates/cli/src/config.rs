//! Run configuration. Two interchangeable formats are read: a JSON object,
//! or flat `dotted.key = value` lines where each value is parsed as JSON
//! when possible and kept as a bare string otherwise.

use root_barrier::measures::ProbabilityMeasure;
use root_barrier::obstacle_pde::{default_domain, interp, Grid};
use root_barrier::Sigma;
use serde::Deserialize;
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub mu: MeasureSource,
    pub nu: MeasureSource,
    #[serde(default)]
    pub sigma: SigmaConfig,
}

/// A measure given inline or as the path of a JSON file holding one.
/// Relative paths are taken from the config file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MeasureSource {
    Inline(ProbabilityMeasure),
    File(PathBuf),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SigmaConfig {
    Constant(f64),
    Identity,
    /// Time-homogeneous `σ(x)`, linear between nodes and flat outside.
    Table {
        xs: Vec<f64>,
        sigma: Vec<f64>,
    },
}

impl Default for SigmaConfig {
    fn default() -> Self {
        SigmaConfig::Constant(1.0)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Domain ends; both default to the support of `μ` and `ν`.
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub n_x: usize,
    #[serde(rename = "T")]
    pub t_max: f64,
    /// Exactly one of `n_t` and `cfl_ratio`; neither means `cfl_ratio = 0.4`.
    pub n_t: Option<usize>,
    pub cfl_ratio: Option<f64>,
    /// Stored time rows in `solution.csv`, first and last included.
    #[serde(default = "default_rows")]
    pub rows: usize,
}

fn default_rows() -> usize {
    101
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-4,
            t_max: 20.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Largest accepted `sup |u_emp - u_ν|` on the grid nodes.
    pub threshold: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { threshold: 0.02 }
    }
}

/// A loaded config with its measures resolved.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub mu: ProbabilityMeasure,
    pub nu: ProbabilityMeasure,
    pub sigma: Sigma,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Loaded, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mu = config.problem.mu.resolve(base)?;
        let nu = config.problem.nu.resolve(base)?;
        let sigma = config.problem.sigma.build()?;
        config.validate()?;
        Ok(Loaded {
            config,
            mu,
            nu,
            sigma,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| format!("JSON config: {e}"))?
        } else {
            parse_flat(text)?
        };
        serde_json::from_value(value).map_err(|e| format!("config: {e}"))
    }

    fn validate(&self) -> Result<(), String> {
        let g = &self.grid;
        if g.n_t.is_some() && g.cfl_ratio.is_some() {
            return Err("grid: give either n_t or cfl_ratio, not both".into());
        }
        if g.rows < 2 {
            return Err(format!("grid.rows = {} must be at least 2", g.rows));
        }
        let mc = &self.mc;
        if mc.n_paths == 0 || !(mc.dt > 0.0) || !(mc.t_max >= mc.dt) {
            return Err(format!(
                "mc: n_paths = {}, dt = {}, t_max = {}",
                mc.n_paths, mc.dt, mc.t_max
            ));
        }
        if !(self.verify.threshold >= 0.0) {
            return Err(format!("verify.threshold = {}", self.verify.threshold));
        }
        Ok(())
    }
}

impl MeasureSource {
    fn resolve(&self, base: &Path) -> Result<ProbabilityMeasure, String> {
        match self {
            MeasureSource::Inline(m) => Ok(m.clone()),
            MeasureSource::File(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| format!("cannot read measure {}: {e}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| format!("measure {}: {e}", path.display()))
            }
        }
    }
}

impl SigmaConfig {
    fn build(&self) -> Result<Sigma, String> {
        match self {
            SigmaConfig::Constant(c) if c.is_finite() && *c > 0.0 => Ok(Sigma::Constant(*c)),
            SigmaConfig::Constant(c) => Err(format!("sigma constant {c} must be positive")),
            SigmaConfig::Identity => Ok(Sigma::Identity),
            SigmaConfig::Table { xs, sigma } => {
                if xs.len() < 2 || xs.len() != sigma.len() {
                    return Err("sigma table needs at least two (x, sigma) nodes".into());
                }
                if xs.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err("sigma table nodes must be strictly increasing".into());
                }
                if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err("sigma table values must be finite and non-negative".into());
                }
                let (xs, ys) = (xs.clone(), sigma.clone());
                Ok(Sigma::custom_homogeneous(
                    format!("table({} nodes)", xs.len()),
                    move |x| interp(&xs, &ys, x),
                ))
            }
        }
    }
}

impl Loaded {
    /// Largest `σ²` on `[a, b]`, as needed for a CFL-driven time step.
    fn sigma_sq_max(&self, a: f64, b: f64) -> f64 {
        match &self.config.problem.sigma {
            SigmaConfig::Table { sigma, .. } => sigma.iter().fold(0.0, |m, s| m.max(s * s)),
            _ => [a, b, 0.5 * (a + b)]
                .iter()
                .map(|&x| self.sigma.eval(0.0, x).powi(2))
                .fold(0.0, f64::max),
        }
    }

    /// The solver grid. An invalid grid is a config error.
    pub fn grid(&self) -> Result<Grid, String> {
        let g = &self.config.grid;
        let (da, db) = default_domain(&self.mu, &self.nu);
        let (a, b) = (g.a.unwrap_or(da), g.b.unwrap_or(db));
        let grid = match g.n_t {
            Some(n_t) => Grid::new(a, b, g.n_x, g.t_max, n_t),
            None => Grid::with_cfl_ratio(
                a,
                b,
                g.n_x,
                g.t_max,
                self.sigma_sq_max(a, b),
                g.cfl_ratio.unwrap_or(0.4),
            ),
        };
        grid.map_err(|e| format!("grid: {e}"))
    }
}

/// `a.b.c = v` lines into a nested JSON object. `#` starts a comment.
fn parse_flat(text: &str) -> Result<Value, String> {
    let mut root = Map::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        let parsed =
            serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(format!("line {}: bad key '{key}'", lineno + 1));
        }
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let entry = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            node = entry
                .as_object_mut()
                .ok_or_else(|| format!("line {}: '{key}' nests under a value", lineno + 1))?;
        }
        let leaf = parts[parts.len() - 1].to_string();
        if node.contains_key(&leaf) {
            return Err(format!("line {}: duplicate key '{key}'", lineno + 1));
        }
        node.insert(leaf, parsed);
    }
    Ok(Value::Object(root))
}
