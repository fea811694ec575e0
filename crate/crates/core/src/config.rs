//! Run configuration: one JSON document describing an experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryConfig;
use crate::model::ModelConfig;
use crate::objective::{CurriculumConfig, LossConfig};
use crate::optim::AdamWConfig;
use crate::scenes::SceneParams;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub scene: SceneParams,
    /// Number of distinct training scenes, seeded consecutively.
    pub n_scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { scene: SceneParams::default(), n_scenes: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub curriculum: CurriculumConfig,
    pub memory: MemoryConfig,
    pub optimizer: AdamWConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            epochs: 2,
            steps_per_epoch: 50,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            curriculum: CurriculumConfig::default(),
            memory: MemoryConfig::default(),
            optimizer: AdamWConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("version {} unsupported (expected {CONFIG_VERSION})", self.version)));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(format!(
                "epochs ({}) and steps_per_epoch ({}) must be >= 1",
                self.epochs, self.steps_per_epoch
            )));
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.curriculum.validate()?;
        self.memory.validate()?;
        self.optimizer.validate()?;
        if self.data.n_scenes == 0 {
            return Err(Error::Config("data.n_scenes must be >= 1".into()));
        }
        if self.data.scene.image_size != self.model.image_size {
            return Err(Error::Config(format!(
                "data.scene.image_size {} differs from model.image_size {}",
                self.data.scene.image_size, self.model.image_size
            )));
        }
        let span = (self.curriculum.n_frames - 1) * self.curriculum.t_max;
        if span >= self.data.scene.n_frames {
            return Err(Error::Config(format!(
                "scenes of {} frames cannot hold {} frames at interval {}",
                self.data.scene.n_frames, self.curriculum.n_frames, self.curriculum.t_max
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
