//! Exact Gaussian-process regression on the unit square with a
//! squared-exponential kernel. Targets are standardized before fitting, so the
//! kernel's signal variance is one in standardized units and equals the sample
//! variance of the targets once predictions are mapped back.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Factorization pivots smaller than this fraction of the largest diagonal
/// entry are treated as singular.
const MIN_PIVOT_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub length_scales: [f64; 2],
    /// Observation noise variance in standardized units.
    pub noise_variance: f64,
    /// Pick length scales by maximizing the marginal likelihood over a log grid.
    pub mle: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            length_scales: [0.3, 0.3],
            noise_variance: 1e-4,
            mle: false,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.length_scales.iter().all(|l| l.is_finite() && *l > 0.0) {
            return Err(Error::config("GP length scales must be positive"));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::config("GP noise variance must be >= 0"));
        }
        Ok(())
    }
}

fn sq_exp(a: &Point, b: &Point, ls: &[f64; 2]) -> f64 {
    let d0 = (a[0] - b[0]) / ls[0];
    let d1 = (a[1] - b[1]) / ls[1];
    (-0.5 * (d0 * d0 + d1 * d1)).exp()
}

/// A fitted GP. Immutable after [`GpModel::fit`].
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Point>,
    targets: Vec<f64>,
    config: GpConfig,
    length_scales: [f64; 2],
    mean: f64,
    scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Serialized form: the fit is recomputed on load.
#[derive(Serialize, Deserialize)]
struct StoredModel {
    inputs: Vec<Point>,
    targets: Vec<f64>,
    config: GpConfig,
    length_scales: [f64; 2],
}

impl Serialize for GpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StoredModel {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            config: self.config,
            length_scales: self.length_scales,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let stored = StoredModel::deserialize(d)?;
        GpModel::fit_with_scales(
            stored.inputs,
            stored.targets,
            stored.config,
            stored.length_scales,
        )
        .map_err(serde::de::Error::custom)
    }
}

impl GpModel {
    pub fn fit(inputs: &[Point], targets: &[f64], config: &GpConfig) -> Result<Self> {
        config.validate()?;
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::domain(format!(
                "GP needs matching non-empty inputs and targets, got {} and {}",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|t| !t.is_finite()) {
            return Err(Error::domain(format!("non-finite GP target {bad}")));
        }
        if inputs.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::domain("non-finite GP input"));
        }
        let scales = if config.mle {
            mle_length_scales(inputs, targets, config)?
        } else {
            config.length_scales
        };
        Self::fit_with_scales(inputs.to_vec(), targets.to_vec(), *config, scales)
    }

    fn fit_with_scales(
        inputs: Vec<Point>,
        targets: Vec<f64>,
        config: GpConfig,
        length_scales: [f64; 2],
    ) -> Result<Self> {
        let (mean, scale) = standardization(&targets);
        let y = DVector::from_iterator(targets.len(), targets.iter().map(|t| (t - mean) / scale));
        let chol = factor(&inputs, &length_scales, config.noise_variance)?;
        let alpha = chol.solve(&y);
        Ok(Self {
            inputs,
            targets,
            config,
            length_scales,
            mean,
            scale,
            chol,
            alpha,
        })
    }

    pub fn inputs(&self) -> &[Point] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn length_scales(&self) -> [f64; 2] {
        self.length_scales
    }

    /// Posterior mean and standard deviation of the latent function, in target units.
    pub fn predict(&self, query: &Point) -> (f64, f64) {
        let (mu, var) = self.predict_standardized(query);
        (self.mean + self.scale * mu, self.scale * var.sqrt())
    }

    /// Posterior mean and variance in standardized units (unit signal variance).
    pub fn predict_standardized(&self, query: &Point) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .iter()
                .map(|x| sq_exp(x, query, &self.length_scales)),
        );
        let mu = k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a non-zero diagonal");
        let var = (1.0 - v.norm_squared()).max(0.0);
        (mu, var)
    }

    /// Target mean and scale used for standardization.
    pub fn standardization(&self) -> (f64, f64) {
        (self.mean, self.scale)
    }
}

/// Mean and sample standard deviation; the scale falls back to 1 for a
/// single point or constant targets.
fn standardization(targets: &[f64]) -> (f64, f64) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    if targets.len() < 2 {
        return (mean, 1.0);
    }
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

fn factor(inputs: &[Point], ls: &[f64; 2], noise: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = inputs.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        sq_exp(&inputs[i], &inputs[j], ls) + if i == j { noise } else { 0.0 }
    });
    let max_diag = (0..n).map(|i| k[(i, i)]).fold(0.0, f64::max);
    let chol = Cholesky::new(k).ok_or_else(|| {
        Error::IllConditioned(format!("{n}x{n} kernel matrix is not positive definite"))
    })?;
    let l = chol.l_dirty();
    let min_pivot = (0..n)
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot <= MIN_PIVOT_RATIO * max_diag {
        return Err(Error::IllConditioned(format!(
            "smallest pivot {min_pivot:.3e} relative to diagonal {max_diag:.3e}; raise the noise variance"
        )));
    }
    Ok(chol)
}

/// Log marginal likelihood of standardized targets.
fn log_marginal_likelihood(
    inputs: &[Point],
    y: &DVector<f64>,
    ls: &[f64; 2],
    noise: f64,
) -> Option<f64> {
    let chol = factor(inputs, ls, noise).ok()?;
    let alpha = chol.solve(y);
    let l = chol.l_dirty();
    let log_det: f64 = (0..y.len()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    Some(
        -0.5 * y.dot(&alpha)
            - 0.5 * log_det
            - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln(),
    )
}

/// Log-spaced candidate length scales from 0.05 to 2.
fn length_scale_grid() -> Vec<f64> {
    const COUNT: usize = 16;
    let (lo, hi) = (0.05f64.ln(), 2.0f64.ln());
    (0..COUNT)
        .map(|i| (lo + (hi - lo) * i as f64 / (COUNT - 1) as f64).exp())
        .collect()
}

fn mle_length_scales(inputs: &[Point], targets: &[f64], config: &GpConfig) -> Result<[f64; 2]> {
    let (mean, scale) = standardization(targets);
    let y = DVector::from_iterator(targets.len(), targets.iter().map(|t| (t - mean) / scale));
    let grid = length_scale_grid();
    let mut best: Option<(f64, [f64; 2])> = None;
    for &a in &grid {
        for &b in &grid {
            if let Some(ll) = log_marginal_likelihood(inputs, &y, &[a, b], config.noise_variance) {
                if best.is_none_or(|(top, _)| ll > top) {
                    best = Some((ll, [a, b]));
                }
            }
        }
    }
    best.map(|(_, ls)| ls).ok_or_else(|| {
        Error::IllConditioned("no candidate length scale gives a positive definite kernel".into())
    })
}
