//! The single JSON configuration document. Every section is optional and
//! falls back to defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::calibrate::CalibrateConfig;
use crate::discrepancy::DiscrepancyConfig;
use crate::error::{Error, Result};
use crate::fluid::SceneConfig;
use crate::gp::GpConfig;
use crate::pour::PourConfig;
use crate::scenario::{default_stir_scene, liquid_preset, StirConfig, LIQUID_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Repetitions of the verification pour.
    pub verify_repeats: usize,
    pub liquids: Vec<String>,
    pub budgets: Vec<usize>,
    pub workers: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            verify_repeats: 5,
            liquids: LIQUID_NAMES.iter().map(|s| s.to_string()).collect(),
            budgets: vec![10, 20],
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Stirring tank; its numerics (spacing, density, dt, iterations, gravity)
    /// are shared with the pouring scene.
    pub scene: SceneConfig,
    pub stir: StirConfig,
    pub gp: GpConfig,
    pub calibrate: CalibrateConfig,
    pub discrepancy: DiscrepancyConfig,
    pub pour: PourConfig,
    pub harness: HarnessConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            scene: default_stir_scene(),
            stir: StirConfig::default(),
            gp: GpConfig::default(),
            calibrate: CalibrateConfig::default(),
            discrepancy: DiscrepancyConfig::default(),
            pour: PourConfig::default(),
            harness: HarnessConfig::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.stir.action.validate()?;
        self.gp.validate()?;
        self.calibrate.validate()?;
        self.discrepancy.validate()?;
        self.pour.validate()?;
        if self.harness.verify_repeats == 0 {
            return Err(Error::config("verify_repeats must be >= 1"));
        }
        if self.harness.workers == 0 {
            return Err(Error::config("workers must be >= 1"));
        }
        for name in &self.harness.liquids {
            liquid_preset(name)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, as lowercase hex.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
