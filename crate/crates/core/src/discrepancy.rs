//! Time-integrated squared difference between two inclination traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::InclinationTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscrepancyConfig {
    /// Value assigned to a capsized rollout (rad^2 s).
    pub penalty: f64,
    /// Rollouts averaged per evaluated parameter.
    pub repeats: u32,
}

impl Default for DiscrepancyConfig {
    fn default() -> Self {
        Self {
            penalty: 10.0,
            repeats: 1,
        }
    }
}

impl DiscrepancyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(Error::config("discrepancy penalty must be finite and >= 0"));
        }
        if self.repeats == 0 {
            return Err(Error::config("discrepancy repeats must be >= 1"));
        }
        Ok(())
    }
}

/// Discrepancy in rad^2 s. A failed value always equals the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyValue {
    pub value: f64,
    pub failed: bool,
}

impl DiscrepancyValue {
    pub fn penalty(penalty: f64) -> Self {
        Self {
            value: penalty,
            failed: true,
        }
    }

    /// Averages repeated evaluations; any failure makes the whole value a failure.
    pub fn mean(values: &[DiscrepancyValue], penalty: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("mean of zero discrepancy values"));
        }
        if values.iter().any(|v| v.failed) {
            return Ok(Self::penalty(penalty));
        }
        Ok(Self {
            value: values.iter().map(|v| v.value).sum::<f64>() / values.len() as f64,
            failed: false,
        })
    }
}

/// Truncates both traces to their common span. Rates and time origins must match.
pub fn align(
    reference: &InclinationTrace,
    simulated: &InclinationTrace,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ra, rb) = (reference.sample_rate, simulated.sample_rate);
    if !((ra - rb).abs() <= 1e-12 * ra.abs().max(rb.abs())) {
        return Err(Error::Alignment(format!(
            "sample rates differ: {ra} Hz vs {rb} Hz"
        )));
    }
    if let (Some(a), Some(b)) = (reference.samples.first(), simulated.samples.first()) {
        if (a.t - b.t).abs() > 1e-9 {
            return Err(Error::Alignment(format!(
                "time origins differ: {} s vs {} s",
                a.t, b.t
            )));
        }
    }
    let n = reference.len().min(simulated.len());
    Ok((
        reference.angles().take(n).collect(),
        simulated.angles().take(n).collect(),
    ))
}

/// Trapezoidal integral of the squared pointwise difference over the aligned span.
pub fn discrepancy(
    reference: &InclinationTrace,
    simulated: &InclinationTrace,
    penalty: f64,
) -> Result<DiscrepancyValue> {
    if reference.failed {
        return Err(Error::domain("reference trace is a failed rollout"));
    }
    if simulated.failed {
        return Ok(DiscrepancyValue::penalty(penalty));
    }
    let (a, b) = align(reference, simulated)?;
    if a.len() < 2 {
        return Err(Error::domain("traces overlap in fewer than two samples"));
    }
    let sq: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).collect();
    let n = sq.len();
    let interior: f64 = sq[1..n - 1].iter().sum();
    let value = (interior + 0.5 * (sq[0] + sq[n - 1])) / reference.sample_rate;
    Ok(DiscrepancyValue {
        value,
        failed: false,
    })
}
