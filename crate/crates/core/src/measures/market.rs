use super::{MeasureError, ProbabilityMeasure};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One row of a `strike,price` CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketQuote {
    pub strike: f64,
    pub price: f64,
}

pub fn read_market_csv(path: impl AsRef<Path>) -> Result<Vec<MarketQuote>, MeasureError> {
    let mut rdr = csv::Reader::from_path(path.as_ref())
        .map_err(|e| MeasureError::MarketData(format!("{}: {e}", path.as_ref().display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| MeasureError::MarketData(e.to_string()))?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["strike", "price"] {
        return Err(MeasureError::MarketData(format!(
            "expected header strike,price, got {headers:?}"
        )));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| MeasureError::MarketData(e.to_string())))
        .collect()
}

/// Relative slack in the no-arbitrage checks, scaled by the price level.
const ARB_SLACK: f64 = 1e-12;

/// Target law implied by call prices. Interior strikes receive the slope
/// jumps of the price curve; the remaining mass goes to the two end strikes,
/// split so that the mean equals `forward`.
pub fn breeden_litzenberger(
    strikes: &[f64],
    call_prices: &[f64],
    forward: f64,
) -> Result<ProbabilityMeasure, MeasureError> {
    let n = strikes.len();
    if n < 3 || call_prices.len() != n {
        return Err(MeasureError::MarketData(format!(
            "need at least 3 strikes with one price each, got {n} strikes and {} prices",
            call_prices.len()
        )));
    }
    if !forward.is_finite() {
        return Err(MeasureError::MarketData(format!("forward {forward}")));
    }
    for i in 0..n {
        if !strikes[i].is_finite() || !call_prices[i].is_finite() {
            return Err(MeasureError::MarketData(format!(
                "non-finite quote at index {i}"
            )));
        }
        if i > 0 && strikes[i] <= strikes[i - 1] {
            return Err(MeasureError::MarketData(format!(
                "strikes not increasing at index {i}"
            )));
        }
    }
    let scale = call_prices.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
    let slack = ARB_SLACK * scale;
    for (i, &c) in call_prices.iter().enumerate() {
        if c < -slack {
            return Err(MeasureError::ArbitrageDetected { index: i });
        }
    }
    let slopes: Vec<f64> = (0..n - 1)
        .map(|i| (call_prices[i + 1] - call_prices[i]) / (strikes[i + 1] - strikes[i]))
        .collect();
    for (i, &s) in slopes.iter().enumerate() {
        if s > slack || s < -1.0 - slack {
            return Err(MeasureError::ArbitrageDetected { index: i + 1 });
        }
    }
    let mut masses = vec![0.0; n];
    for i in 1..n - 1 {
        let q = slopes[i] - slopes[i - 1];
        if q < -slack {
            return Err(MeasureError::ArbitrageDetected { index: i });
        }
        masses[i] = q.max(0.0);
    }
    let interior: f64 = masses.iter().sum();
    let interior_first: f64 = masses.iter().zip(strikes).map(|(p, k)| p * k).sum();
    let residual = 1.0 - interior;
    let (k0, kn) = (strikes[0], strikes[n - 1]);
    let p_hi = (forward - interior_first - residual * k0) / (kn - k0);
    let p_lo = residual - p_hi;
    let feasibility = 1e-9;
    if p_hi < -feasibility || p_lo < -feasibility {
        return Err(MeasureError::MeanRepairInfeasible { forward });
    }
    masses[0] = p_lo.max(0.0);
    masses[n - 1] = p_hi.max(0.0);
    let total: f64 = masses.iter().sum();
    let atoms = strikes
        .iter()
        .zip(&masses)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&k, &p)| (k, p / total))
        .collect();
    ProbabilityMeasure::atomic(atoms)
}
