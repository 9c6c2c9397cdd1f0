//! One-shot pour optimization in simulation under calibrated parameters, and
//! verification of the chosen action under the hidden true parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{bayes_opt, posterior_argmin, BoSettings};
use crate::error::{Error, Result};
use crate::fluid::{FluidParams, SceneConfig};
use crate::gp::{GpConfig, Point};
use crate::scenario::{run_pour, PourAction, PourSetup, SpillResult};
use crate::seed::{derive, Stream};

/// Box of admissible pour actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PourSearchSpace {
    pub omega: [f64; 2],
    pub p: [f64; 2],
}

impl Default for PourSearchSpace {
    fn default() -> Self {
        Self {
            omega: [0.3, 3.0],
            p: [0.0, 0.08],
        }
    }
}

impl PourSearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: &[f64; 2]| b[0].is_finite() && b[1].is_finite() && b[0] < b[1];
        if !ok(&self.omega) || !ok(&self.p) {
            return Err(Error::config(format!(
                "pour bounds need lower < upper, got {self:?}"
            )));
        }
        if self.omega[0] <= 0.0 {
            return Err(Error::config("pour omega bounds must be positive"));
        }
        Ok(())
    }

    /// Maps a point of the unit square onto the box.
    pub fn action(&self, u: &Point) -> PourAction {
        let lerp = |b: &[f64; 2], t: f64| b[0] + (b[1] - b[0]) * t;
        PourAction {
            omega: lerp(&self.omega, u[0]),
            p: lerp(&self.p, u[1]),
        }
    }

    pub fn contains(&self, a: &PourAction) -> bool {
        (self.omega[0]..=self.omega[1]).contains(&a.omega) && (self.p[0]..=self.p[1]).contains(&a.p)
    }

    /// `n x n` evenly spaced actions including the corners, omega slowest.
    pub fn grid(&self, n: usize) -> Vec<PourAction> {
        let step = (n.max(2) - 1) as f64;
        (0..n * n)
            .map(|i| self.action(&[(i / n) as f64 / step, (i % n) as f64 / step]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PourConfig {
    pub setup: PourSetup,
    pub space: PourSearchSpace,
    pub budget: usize,
    pub initial_design: usize,
    pub beta: f64,
    pub grid_resolution: usize,
}

impl Default for PourConfig {
    fn default() -> Self {
        Self {
            setup: PourSetup::default(),
            space: PourSearchSpace::default(),
            budget: 15,
            initial_design: 4,
            beta: 2.0,
            grid_resolution: 101,
        }
    }
}

impl PourConfig {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.budget < self.initial_design || self.initial_design == 0 {
            return Err(Error::config(format!(
                "pour budget {} must be at least the initial design size {} (>= 1)",
                self.budget, self.initial_design
            )));
        }
        if self.grid_resolution < 2 {
            return Err(Error::config("pour grid resolution must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PourRecord {
    pub omega: f64,
    pub p: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    pub spilled: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PourOptimization {
    /// Best observed action, executed as the one-shot pour.
    pub action: PourAction,
    pub predicted_z: f64,
    /// Minimizer of the final posterior mean, for reference.
    pub posterior_argmin: PourAction,
    /// Seed shared by every optimization rollout.
    pub rollout_seed: u64,
    pub pour_history: Vec<PourRecord>,
}

/// Bayesian optimization of the spill ratio over the search box under `theta`.
pub fn optimize_pour(
    theta: &FluidParams,
    cfg: &PourConfig,
    scene: &SceneConfig,
    gp: &GpConfig,
    seed: u64,
) -> Result<PourOptimization> {
    cfg.validate()?;
    let rollout_seed = derive(seed, Stream::Rollout, 0);
    let settings = BoSettings {
        budget: cfg.budget,
        initial_design: cfg.initial_design,
        beta: cfg.beta,
        grid_resolution: cfg.grid_resolution,
        gp: *gp,
        design_seed: derive(seed, Stream::Design, 0),
    };
    let (evals, model) = bayes_opt(&settings, |u| {
        let action = cfg.space.action(u);
        let r = run_pour(theta, &action, scene, &cfg.setup, rollout_seed)?;
        Ok((r.ratio, (action, r)))
    })?;
    let best = evals
        .iter()
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .expect("budget >= 1");
    Ok(PourOptimization {
        action: best.extra.0,
        predicted_z: best.value,
        posterior_argmin: cfg
            .space
            .action(&posterior_argmin(&model, cfg.grid_resolution)),
        rollout_seed,
        pour_history: evals
            .iter()
            .map(|e| PourRecord {
                omega: e.extra.0.omega,
                p: e.extra.0.p,
                z: e.extra.1.ratio,
                spilled: e.extra.1.spilled,
                total: e.extra.1.total,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SpillResult>,
    pub mean_z: f64,
}

/// Executes `action` once per seed under the true parameters.
pub fn verify_pour(
    theta_true: &FluidParams,
    action: &PourAction,
    scene: &SceneConfig,
    setup: &PourSetup,
    seeds: &[u64],
) -> Result<Verification> {
    if seeds.is_empty() {
        return Err(Error::domain("verification needs at least one seed"));
    }
    let per_seed = seeds
        .par_iter()
        .map(|&s| run_pour(theta_true, action, scene, setup, s))
        .collect::<Result<Vec<_>>>()?;
    let mean_z = per_seed.iter().map(|r| r.ratio).sum::<f64>() / per_seed.len() as f64;
    Ok(Verification {
        seeds: seeds.to_vec(),
        per_seed,
        mean_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_mapping() {
        let s = PourSearchSpace::default();
        assert_eq!(s.action(&[0.0, 0.0]), PourAction { omega: 0.3, p: 0.0 });
        assert_eq!(
            s.action(&[1.0, 1.0]),
            PourAction {
                omega: 3.0,
                p: 0.08
            }
        );
        let g = s.grid(4);
        assert_eq!(g.len(), 16);
        assert!(g.iter().all(|a| s.contains(a)));
        assert_eq!(
            g[15],
            PourAction {
                omega: 3.0,
                p: 0.08
            }
        );
        let bad = PourSearchSpace {
            omega: [1.0, 1.0],
            ..s
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn budget_below_design_rejected() {
        let cfg = PourConfig {
            budget: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
