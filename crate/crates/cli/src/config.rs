//! TOML run configuration for `vigc train`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vigc::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub paths: PathsConfig,
    pub export: ExportConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// MNIST training images in IDX format; required for moving-mnist.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnist_idx: Option<PathBuf>,
    /// Used when `--out` is not given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Extra copy of the final checkpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Iterations between checkpoints; 0 writes only `final.ckpt`.
    pub checkpoint_every: u64,
    /// Iterations between sample grids; 0 writes only the final grid.
    pub sample_every: u64,
    /// Test clips shown in a sample grid.
    pub sample_clips: usize,
    /// Iterations between progress lines on stdout; 0 is silent.
    pub log_every: u64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            checkpoint_every: 0,
            sample_every: 100,
            sample_clips: 4,
            log_every: 10,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.train.validate()?;
        if cfg.export.sample_clips == 0 {
            anyhow::bail!("export.sample_clips must be at least 1");
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
