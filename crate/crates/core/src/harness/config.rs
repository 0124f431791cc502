//! On-disk experiment configuration and split datasets.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionTrainConfig};
use crate::error::{Error, Result};
use crate::fovea::{FoveaPolicy, FoveaSelectionConfig};
use crate::harness::flops::compute_flops;
use crate::harness::train::TrainConfig;
use crate::planner::{build_uniresolution_baseline, ModelConfig, PlannerVariant};
use crate::seed::{derive_seed, derive_seed_n};
use crate::world::{generate_clip, read_clip, read_manifest, write_dataset, DatasetManifest, VideoClip, WorldConfig};

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub world: WorldConfig,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            world: WorldConfig::toy(4),
            train: 16,
            validation: 4,
            test: 10,
        }
    }
}

impl DataConfig {
    pub fn split_size(&self, split: &str) -> usize {
        match split {
            "train" => self.train,
            "validation" => self.validation,
            _ => self.test,
        }
    }
}

/// Seed of the `i`-th clip in `split`.
pub fn clip_seed(seed: u64, split: &str, i: usize) -> u64 {
    derive_seed_n(seed, split, i as u64)
}

/// Generates every split into `out/<split>/`, one clip at a time.
pub fn generate_splits(config: &DataConfig, out: &Path, seed: u64) -> Result<Vec<(String, DatasetManifest)>> {
    config.world.validate()?;
    let mut manifests = Vec::new();
    for split in SPLITS {
        let n = config.split_size(split);
        if n == 0 {
            continue;
        }
        let dir = out.join(split);
        let mut clips = Vec::with_capacity(n);
        for i in 0..n {
            clips.push(generate_clip(&config.world, clip_seed(seed, split, i))?);
        }
        manifests.push((split.to_string(), write_dataset(&clips, &dir)?));
    }
    write_json(&out.join("data_config.json"), config)?;
    Ok(manifests)
}

/// Directory holding a split; `root` may itself be a split directory.
pub fn split_dir(root: &Path, split: &str) -> PathBuf {
    let nested = root.join(split);
    if nested.join("manifest.json").exists() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// Lazily reads the clips of a dataset directory in manifest order.
pub fn stream_clips(dir: &Path) -> Result<impl Iterator<Item = Result<VideoClip>>> {
    let dir = dir.to_path_buf();
    let manifest = read_manifest(&dir)?;
    Ok((0..manifest.clips.len()).map(move |i| read_clip(&dir, &manifest, &manifest.clips[i])))
}

pub fn frame_rate(dir: &Path) -> Result<f64> {
    Ok(read_manifest(dir)?.frame_rate)
}

/// Describes a driving model before its FLOPs-matched or concrete form is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub scale: usize,
    pub policy: FoveaPolicy,
    /// Defaults to combined for fovea policies and periphery-only otherwise.
    #[serde(default)]
    pub variant: Option<PlannerVariant>,
    #[serde(default)]
    pub seed: u64,
    /// Fovea sampler seed; derived from the model seed when absent.
    #[serde(default)]
    pub fovea_seed: Option<u64>,
    /// Replace the described model with a periphery-only model of equal FLOPs.
    #[serde(default)]
    pub uniresolution: bool,
}

impl ModelSpec {
    pub fn new(scale: usize, policy: FoveaPolicy, seed: u64) -> Self {
        ModelSpec {
            scale,
            policy,
            variant: None,
            seed,
            fovea_seed: None,
            uniresolution: false,
        }
    }

    pub fn build(&self) -> Result<ModelConfig> {
        let variant = self.variant.unwrap_or(match self.policy {
            FoveaPolicy::None => PlannerVariant::PeripheryOnly,
            _ => PlannerVariant::Combined,
        });
        let fovea = match self.policy {
            FoveaPolicy::None => None,
            ref p => {
                let crop = crate::encoders::PreprocConfig::for_scale(self.scale).patch_crop;
                Some(FoveaSelectionConfig::new(p.clone(), crop, self.fovea_seed.unwrap_or_else(|| derive_seed(self.seed, "fovea"))))
            }
        };
        let config = ModelConfig::new(variant, self.scale, fovea, self.seed)?;
        if !self.uniresolution {
            return Ok(config);
        }
        let target = compute_flops(&config)?.total();
        build_uniresolution_baseline(&config, target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub training: TrainConfig,
    /// Attention checkpoint; relative paths resolve against the config file.
    #[serde(default)]
    pub attention: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRunConfig {
    pub scale: usize,
    #[serde(default)]
    pub backbone_seed: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub training: AttentionTrainConfig,
}

impl AttentionRunConfig {
    pub fn build(&self) -> Result<AttentionConfig> {
        AttentionConfig::for_scale(self.scale, self.backbone_seed, self.seed)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Resolves `path` against the directory of `base` when relative.
pub fn relative_to(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    base.parent().map_or_else(|| path.to_path_buf(), |p| p.join(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_defaults_follow_policy() {
        let none = ModelSpec::new(4, FoveaPolicy::None, 1).build().unwrap();
        assert_eq!(none.variant, PlannerVariant::PeripheryOnly);
        let top = ModelSpec::new(4, FoveaPolicy::TopK, 1).build().unwrap();
        assert_eq!(top.variant, PlannerVariant::Combined);
        assert_eq!(top, ModelConfig::for_policy(4, FoveaPolicy::TopK, 1).unwrap());
    }

    #[test]
    fn run_config_parses_minimal_json() {
        let c: RunConfig = serde_json::from_str(r#"{"model":{"scale":4,"policy":{"kind":"central"}}}"#).unwrap();
        assert_eq!(c.training, TrainConfig::default());
        assert!(c.model.build().is_ok());
    }
}
