//! Top-level run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetConfig;
use crate::diffusion::{DiffusionConfig, SamplerConfig};
use crate::error::{Error, Result};
use crate::eval::EmdConfig;
use crate::models::ModelConfig;
use crate::vae::VaeConfig;

/// Environment variable that overrides [`RunConfig::seed`].
pub const SEED_ENV: &str = "GRASPLDM_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Generated grasps per object.
    pub grasps_per_object: usize,
    /// Randomly rotate each cloud before generating, then map grasps back.
    pub rotate: bool,
    pub emd: EmdConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { grasps_per_object: 100, rotate: true, emd: EmdConfig::default() }
    }
}

/// Every setting of a run. Unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Training precision.
    pub dtype: Dtype,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub vae: VaeConfig,
    pub diffusion: DiffusionConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dtype: Dtype::F32,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            vae: VaeConfig::default(),
            diffusion: DiffusionConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.vae.validate()?;
        self.diffusion.validate()?;
        self.sampler.validate(self.diffusion.timesteps)?;
        self.eval.emd.validate()?;
        if self.dataset.num_points != self.model.num_points {
            return Err(Error::Config(format!(
                "dataset.num_points ({}) differs from model.num_points ({})",
                self.dataset.num_points, self.model.num_points
            )));
        }
        if self.eval.grasps_per_object == 0 {
            return Err(Error::Config("eval.grasps_per_object must be positive".into()));
        }
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config always serializes")
    }

    pub fn from_value(v: &serde_json::Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(v.clone()).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
