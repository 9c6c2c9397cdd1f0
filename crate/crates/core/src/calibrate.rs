//! Stirring calibration: Bayesian optimization of the trace discrepancy over
//! the unit parameter square, the posterior-mean argmin reported as the
//! calibrated parameters, and the approximate likelihood surface
//! `Phi((eps - mu) / sigma)`.

use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::discrepancy::{discrepancy, DiscrepancyConfig, DiscrepancyValue};
use crate::error::{Error, Result};
use crate::fluid::{FluidParams, SceneConfig};
use crate::gp::{GpConfig, GpModel, Point};
use crate::scenario::{run_stir, InclinationTrace, StirConfig};
use crate::seed::{derive, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub initial_design: usize,
    /// Acquisition exploration weight in `mu - beta * sigma`.
    pub beta: f64,
    /// Points per axis of the acquisition and argmin grid.
    pub grid_resolution: usize,
    /// Points per axis of the exported likelihood grid.
    pub posterior_resolution: usize,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            initial_design: 5,
            beta: 2.0,
            grid_resolution: 101,
            posterior_resolution: 51,
        }
    }
}

impl CalibrateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_design == 0 {
            return Err(Error::config("initial design size must be >= 1"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta must be finite and >= 0"));
        }
        if self.grid_resolution < 2 || self.posterior_resolution < 2 {
            return Err(Error::config("grid resolutions must be >= 2"));
        }
        Ok(())
    }
}

/// Latin-hypercube sample of `n` points in the open unit square.
pub fn initial_design(n: usize, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::domain("initial design needs at least one point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes = [(0..n).collect::<Vec<_>>(), (0..n).collect::<Vec<_>>()];
    for axis in &mut axes {
        axis.shuffle(&mut rng);
    }
    Ok((0..n)
        .map(|k| {
            let mut p = [0.0; 2];
            for (d, axis) in axes.iter().enumerate() {
                let u: f64 = rng.sample(Open01);
                p[d] = (axis[k] as f64 + u) / n as f64;
            }
            p
        })
        .collect())
}

/// Grid point `index` on a `res x res` lattice over the unit square; the first
/// coordinate varies slowest.
pub fn grid_point(index: usize, res: usize) -> Point {
    let step = (res - 1) as f64;
    [(index / res) as f64 / step, (index % res) as f64 / step]
}

/// Lowest value of `f` over the grid; ties go to the lowest row-major index.
pub fn grid_argmin(res: usize, f: impl Fn(&Point) -> f64) -> (usize, Point, f64) {
    let mut best = (0, grid_point(0, res), f64::INFINITY);
    for index in 0..res * res {
        let p = grid_point(index, res);
        let v = f(&p);
        if v < best.2 {
            best = (index, p, v);
        }
    }
    best
}

/// Lower-confidence-bound minimizer over the grid.
pub fn propose_next(model: &GpModel, beta: f64, res: usize) -> Point {
    lcb_argmin(|p| model.predict(p), beta, res)
}

/// LCB minimizer for any `(mu, sigma)` predictor.
pub fn lcb_argmin(predict: impl Fn(&Point) -> (f64, f64), beta: f64, res: usize) -> Point {
    grid_argmin(res, |p| {
        let (mu, sigma) = predict(p);
        mu - beta * sigma
    })
    .1
}

/// Posterior-mean minimizer over the grid.
pub fn posterior_argmin(model: &GpModel, res: usize) -> Point {
    grid_argmin(res, |p| model.predict(p).0).1
}

/// One evaluated point of a BO run, with whatever the objective attaches.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation<T> {
    pub point: Point,
    pub value: f64,
    pub extra: T,
}

pub(crate) struct BoSettings {
    pub budget: usize,
    pub initial_design: usize,
    pub beta: f64,
    pub grid_resolution: usize,
    pub gp: GpConfig,
    pub design_seed: u64,
}

/// Space-filling start followed by sequential LCB proposals. Returns every
/// evaluation in order and the GP fitted to all of them.
pub(crate) fn bayes_opt<T: Send>(
    settings: &BoSettings,
    objective: impl Fn(&Point) -> Result<(f64, T)> + Sync,
) -> Result<(Vec<Evaluation<T>>, GpModel)> {
    if settings.budget == 0 {
        return Err(Error::domain("optimization budget must be >= 1"));
    }
    let n0 = settings.initial_design.min(settings.budget);
    let design = initial_design(n0, settings.design_seed)?;
    let mut evals: Vec<Evaluation<T>> = design
        .par_iter()
        .map(|p| {
            objective(p).map(|(value, extra)| Evaluation {
                point: *p,
                value,
                extra,
            })
        })
        .collect::<Result<_>>()?;
    let fit = |evals: &[Evaluation<T>]| {
        let xs: Vec<Point> = evals.iter().map(|e| e.point).collect();
        let ys: Vec<f64> = evals.iter().map(|e| e.value).collect();
        GpModel::fit(&xs, &ys, &settings.gp)
    };
    let mut model = fit(&evals)?;
    while evals.len() < settings.budget {
        let p = propose_next(&model, settings.beta, settings.grid_resolution);
        let (value, extra) = objective(&p)?;
        evals.push(Evaluation {
            point: p,
            value,
            extra,
        });
        model = fit(&evals)?;
    }
    Ok((evals, model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub iteration: usize,
    pub theta: FluidParams,
    pub discrepancy: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResult {
    /// Posterior-mean argmin over the grid.
    pub theta_star: FluidParams,
    /// Lowest observed discrepancy and where it was seen.
    pub theta_best_observed: FluidParams,
    pub epsilon: f64,
    pub history: Vec<CalibrationStep>,
    pub model: GpModel,
}

fn params(p: &Point) -> Result<FluidParams> {
    FluidParams::new(p[0], p[1])
}

/// Discrepancy of the simulated stir at `theta` against `reference`, averaged
/// over `repeats` rollouts whose seeds derive from `rollout_seed`.
pub fn evaluate_theta(
    theta: &FluidParams,
    reference: &InclinationTrace,
    stir: &StirConfig,
    scene: &SceneConfig,
    disc: &DiscrepancyConfig,
    rollout_seed: u64,
) -> Result<DiscrepancyValue> {
    let values = (0..u64::from(disc.repeats))
        .map(|r| {
            let trace = run_stir(theta, stir, scene, derive(rollout_seed, Stream::Rollout, r))?;
            discrepancy(reference, &trace, disc.penalty)
        })
        .collect::<Result<Vec<_>>>()?;
    DiscrepancyValue::mean(&values, disc.penalty)
}

/// Everything [`infer`] needs besides the reference trace and the budget.
#[derive(Debug, Clone, Copy)]
pub struct InferenceSetup<'a> {
    pub stir: &'a StirConfig,
    pub scene: &'a SceneConfig,
    pub gp: &'a GpConfig,
    pub discrepancy: &'a DiscrepancyConfig,
    pub calibrate: &'a CalibrateConfig,
}

/// Runs the calibration loop for `budget` discrepancy evaluations in total.
pub fn infer(
    reference: &InclinationTrace,
    setup: &InferenceSetup,
    budget: usize,
    seed: u64,
) -> Result<InferenceResult> {
    if budget == 0 {
        return Err(Error::domain("calibration budget must be >= 1"));
    }
    if reference.failed {
        return Err(Error::domain("reference trace is a failed rollout"));
    }
    setup.calibrate.validate()?;
    setup.discrepancy.validate()?;
    let rollout_seed = derive(seed, Stream::Rollout, 0);
    let settings = BoSettings {
        budget,
        initial_design: setup.calibrate.initial_design,
        beta: setup.calibrate.beta,
        grid_resolution: setup.calibrate.grid_resolution,
        gp: *setup.gp,
        design_seed: derive(seed, Stream::Design, 0),
    };
    let (evals, model) = bayes_opt(&settings, |p| {
        let theta = params(p)?;
        let d = evaluate_theta(
            &theta,
            reference,
            setup.stir,
            setup.scene,
            setup.discrepancy,
            rollout_seed,
        )?;
        Ok((d.value, d.failed))
    })?;
    if evals.iter().all(|e| e.extra) {
        return Err(Error::CalibrationFailed(format!(
            "all {} stir rollouts capsized",
            evals.len()
        )));
    }
    let history = evals
        .iter()
        .enumerate()
        .map(|(k, e)| {
            Ok(CalibrationStep {
                iteration: k + 1,
                theta: params(&e.point)?,
                discrepancy: e.value,
                failed: e.extra,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = evals
        .iter()
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .expect("budget >= 1");
    Ok(InferenceResult {
        theta_star: params(&posterior_argmin(&model, setup.calibrate.grid_resolution))?,
        theta_best_observed: params(&best.point)?,
        epsilon: best.value,
        history,
        model,
    })
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Approximate likelihood of one cell; a zero-variance cell is the indicator `mu <= eps`.
pub fn likelihood(mu: f64, sigma: f64, epsilon: f64) -> f64 {
    if sigma > 0.0 {
        phi((epsilon - mu) / sigma)
    } else if mu <= epsilon {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorCell {
    pub theta1: f64,
    pub theta2: f64,
    pub mu: f64,
    pub sigma: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub resolution: usize,
    pub epsilon: f64,
    /// Row-major, first coordinate slowest.
    pub cells: Vec<PosteriorCell>,
}

pub fn posterior_grid(model: &GpModel, epsilon: f64, resolution: usize) -> Result<PosteriorGrid> {
    if resolution < 2 {
        return Err(Error::domain(
            "posterior grid needs at least 2 points per axis",
        ));
    }
    let cells = (0..resolution * resolution)
        .map(|i| {
            let p = grid_point(i, resolution);
            let (mu, sigma) = model.predict(&p);
            PosteriorCell {
                theta1: p[0],
                theta2: p[1],
                mu,
                sigma,
                value: likelihood(mu, sigma, epsilon),
            }
        })
        .collect();
    Ok(PosteriorGrid {
        resolution,
        epsilon,
        cells,
    })
}

impl PosteriorGrid {
    /// CSV with header `theta1,theta2,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["theta1", "theta2", "value"])?;
        for c in &self.cells {
            w.write_record([
                c.theta1.to_string(),
                c.theta2.to_string(),
                c.value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
