//! Twin experiments: a hidden preset generates the reference stir, the
//! calibration recovers parameters from it, the pour is optimized under the
//! recovered parameters and finally verified under the hidden ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::calibrate::{infer, CalibrationStep, InferenceSetup};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fluid::FluidParams;
use crate::pour::{optimize_pour, verify_pour, PourRecord};
use crate::scenario::{liquid_preset, run_stir, PourAction};
use crate::seed::{derive, derive_raw, label, Stream};

/// JSON schema every serialized [`TwinReport`] satisfies.
pub const REPORT_SCHEMA: &str = include_str!("../schema/twin_report.schema.json");

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwinSeeds {
    pub cell: u64,
    pub reference: u64,
    pub calibration: u64,
    pub pour: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwinReport {
    pub liquid: String,
    #[serde(rename = "N")]
    pub budget: usize,
    pub master_seed: u64,
    pub seeds: TwinSeeds,
    pub theta_true: FluidParams,
    pub theta_star: FluidParams,
    pub theta_best_observed: FluidParams,
    pub epsilon: f64,
    pub calibration_history: Vec<CalibrationStep>,
    pub pour_action: PourAction,
    pub predicted_z: f64,
    pub pour_posterior_argmin: PourAction,
    pub pour_history: Vec<PourRecord>,
    pub verify_seeds: Vec<u64>,
    pub per_seed_z: Vec<f64>,
    pub per_seed_spilled: Vec<usize>,
    pub total_particles: usize,
    pub mean_z: f64,
    pub wall_clock_seconds: f64,
    pub config_digest: String,
    pub tool_version: String,
}

impl TwinReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Serialization with the wall-clock field zeroed, for reproducibility checks.
    pub fn to_json_without_wall_clock(&self) -> Result<String> {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
        .to_json()
    }

    pub fn file_name(&self) -> String {
        format!(
            "twin_{}_N{}_seed{}.json",
            self.liquid, self.budget, self.master_seed
        )
    }
}

/// Root seed of one `(liquid, N)` cell; distinct cells draw from disjoint streams.
pub fn cell_seed(master: u64, liquid: &str, budget: usize) -> u64 {
    derive(
        derive_raw(master, label(liquid), 0),
        Stream::Cell,
        budget as u64,
    )
}

pub fn twin_seeds(master: u64, liquid: &str, budget: usize) -> TwinSeeds {
    let cell = cell_seed(master, liquid, budget);
    TwinSeeds {
        cell,
        reference: derive(cell, Stream::Reference, 0),
        calibration: derive(cell, Stream::Calibration, 0),
        pour: derive(cell, Stream::Pour, 0),
    }
}

pub fn verify_seeds(cell: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64)
        .map(|i| derive(cell, Stream::Verify, i))
        .collect()
}

/// Runs the full twin pipeline for one preset and calibration budget.
pub fn run_twin(liquid: &str, budget: usize, master_seed: u64, cfg: &Config) -> Result<TwinReport> {
    let started = Instant::now();
    let preset = liquid_preset(liquid)?;
    cfg.validate()?;
    if budget < cfg.calibrate.initial_design {
        return Err(Error::domain(format!(
            "twin budget {budget} is below the initial design size {}",
            cfg.calibrate.initial_design
        )));
    }
    let seeds = twin_seeds(master_seed, liquid, budget);
    let theta_true = preset.params;

    let reference = run_stir(&theta_true, &cfg.stir, &cfg.scene, seeds.reference)
        .map_err(|e| e.in_stage("reference"))?;
    if reference.failed {
        return Err(Error::domain("reference stir capsized").in_stage("reference"));
    }
    let setup = InferenceSetup {
        stir: &cfg.stir,
        scene: &cfg.scene,
        gp: &cfg.gp,
        discrepancy: &cfg.discrepancy,
        calibrate: &cfg.calibrate,
    };
    let inference = infer(&reference, &setup, budget, seeds.calibration)
        .map_err(|e| e.in_stage("calibration"))?;
    let pour = optimize_pour(
        &inference.theta_star,
        &cfg.pour,
        &cfg.scene,
        &cfg.gp,
        seeds.pour,
    )
    .map_err(|e| e.in_stage("pour"))?;
    let vseeds = verify_seeds(seeds.cell, cfg.harness.verify_repeats);
    let verification = verify_pour(
        &theta_true,
        &pour.action,
        &cfg.scene,
        &cfg.pour.setup,
        &vseeds,
    )
    .map_err(|e| e.in_stage("verify"))?;

    Ok(TwinReport {
        liquid: preset.name.to_string(),
        budget,
        master_seed,
        seeds,
        theta_true,
        theta_star: inference.theta_star,
        theta_best_observed: inference.theta_best_observed,
        epsilon: inference.epsilon,
        calibration_history: inference.history,
        pour_action: pour.action,
        predicted_z: pour.predicted_z,
        pour_posterior_argmin: pour.posterior_argmin,
        pour_history: pour.pour_history,
        verify_seeds: vseeds,
        per_seed_z: verification.per_seed.iter().map(|r| r.ratio).collect(),
        per_seed_spilled: verification.per_seed.iter().map(|r| r.spilled).collect(),
        total_particles: verification.per_seed[0].total,
        mean_z: verification.mean_z,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        config_digest: cfg.digest(),
        tool_version: TOOL_VERSION.to_string(),
    })
}

/// One cell of a sweep: either a report or the error that stopped it.
#[derive(Debug)]
pub struct SweepCell {
    pub liquid: String,
    pub budget: usize,
    pub outcome: Result<TwinReport>,
}

/// Runs every `(liquid, N)` cell on up to `workers` threads. Failed cells are
/// recorded and do not stop the others.
pub fn sweep(
    liquids: &[String],
    budgets: &[usize],
    master_seed: u64,
    cfg: &Config,
    workers: usize,
) -> Result<Vec<SweepCell>> {
    if liquids.is_empty() || budgets.is_empty() {
        return Err(Error::domain(
            "sweep needs at least one liquid and one budget",
        ));
    }
    let cells: Vec<(String, usize)> = liquids
        .iter()
        .flat_map(|l| budgets.iter().map(move |&n| (l.clone(), n)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        cells
            .into_par_iter()
            .map(|(liquid, budget)| {
                let outcome = run_twin(&liquid, budget, master_seed, cfg);
                SweepCell {
                    liquid,
                    budget,
                    outcome,
                }
            })
            .collect()
    }))
}

/// Summary CSV `liquid,N,mean_Z,theta_star_1,theta_star_2`; failed cells carry NaN.
pub fn write_summary<W: Write>(cells: &[SweepCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["liquid", "N", "mean_Z", "theta_star_1", "theta_star_2"])?;
    for c in cells {
        let (z, t) = match &c.outcome {
            Ok(r) => (r.mean_z, r.theta_star.as_array()),
            Err(_) => (f64::NAN, [f64::NAN; 2]),
        };
        w.write_record([
            c.liquid.clone(),
            c.budget.to_string(),
            z.to_string(),
            t[0].to_string(),
            t[1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn cell_seeds_are_disjoint() {
        let mut all = HashSet::new();
        let mut count = 0;
        for liquid in ["water", "glycerin", "gel"] {
            for n in [5, 10, 20, 40] {
                let s = twin_seeds(3, liquid, n);
                let mut set = vec![s.cell, s.reference, s.calibration, s.pour];
                set.extend(verify_seeds(s.cell, 5));
                count += set.len();
                all.extend(set);
            }
        }
        assert_eq!(all.len(), count);
    }

    #[test]
    fn unknown_liquid() {
        let r = run_twin("milk", 10, 1, &Config::default());
        assert!(matches!(r, Err(Error::UnknownLiquid(_))));
    }

    #[test]
    fn empty_sweep_rejected() {
        let cfg = Config::default();
        assert!(sweep(&["water".into()], &[], 1, &cfg, 1).is_err());
        assert!(sweep(&[], &[10], 1, &cfg, 1).is_err());
    }

    #[test]
    fn failed_cells_stay_in_summary() {
        let cfg = Config::default();
        // Budgets below the initial design fail immediately without simulating.
        let cells = sweep(&["water".into(), "gel".into()], &[2], 1, &cfg, 2).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.outcome.is_err()));
        let mut buf = Vec::new();
        write_summary(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "liquid,N,mean_Z,theta_star_1,theta_star_2");
        assert_eq!(lines[1], "water,2,NaN,NaN,NaN");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/report.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(
            std::fs::read_dir(path.parent().unwrap()).unwrap().count(),
            1
        );
    }
}
