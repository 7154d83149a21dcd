//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::scene::{SceneConfig, SplitSizes};
use crate::train::{DownstreamConfig, PretrainConfig};

/// Environment variable that overrides `output_dir`.
pub const OUT_DIR_ENV: &str = "CSIPOS_OUT_DIR";

/// Training method of an experiment cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Pretrain on unlabeled snapshots, then fine-tune on the labeled set.
    Proposed,
    /// Same architecture trained on the labeled set only.
    BaselineA,
    /// Reserved; not implemented.
    Sscl,
    /// Reserved; not implemented.
    HardEm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::BaselineA => "baseline-a",
            Method::Sscl => "sscl",
            Method::HardEm => "hard-em",
        }
    }

    pub fn is_implemented(self) -> bool {
        matches!(self, Method::Proposed | Method::BaselineA)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Proposed, Method::BaselineA, Method::Sscl, Method::HardEm]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub pretrain_size: usize,
    /// Size of the labeled pool; smaller training sets are its prefixes.
    pub labeled_size: usize,
    pub validation_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            pretrain_size: 3000,
            labeled_size: 1000,
            validation_size: 1480,
        }
    }
}

impl DataConfig {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            pretrain: self.pretrain_size,
            labeled: self.labeled_size,
            validation: self.validation_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Angular bin counts `K` for the pretraining stage.
    pub bins: Vec<usize>,
    /// Labeled training-set sizes `N_T`.
    pub labeled_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            bins: vec![30],
            labeled_sizes: vec![200, 300, 500, 750, 1000],
            seeds: vec![1, 2, 3, 4, 5],
            methods: vec![Method::Proposed, Method::BaselineA],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub scene: SceneConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub downstream: DownstreamConfig,
    pub grid: GridConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            scene: SceneConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            downstream: DownstreamConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small scene and short schedules that finish on one CPU core in
    /// minutes.
    pub fn desk_scale() -> Self {
        Self {
            output_dir: PathBuf::from("out/desk"),
            scene: SceneConfig {
                num_antennas: 8,
                num_subcarriers: 16,
                detection_angle_noise_deg: 1.0,
                ..SceneConfig::default()
            },
            data: DataConfig {
                pretrain_size: 500,
                labeled_size: 200,
                validation_size: 300,
            },
            model: ModelConfig::default(),
            pretrain: PretrainConfig {
                iterations: 1500,
                batch_size: 16,
                lr_encoder: 0.1,
                lr_fn1: 0.1,
                bins: 15,
                decay_every: 300,
                ..PretrainConfig::default()
            },
            downstream: DownstreamConfig {
                epochs: 300,
                batch_size: 16,
                lr_encoder: 1e-4,
                lr_fn2: 1e-4,
                baseline_lr: 3e-4,
                decay_every: 100,
                eval_every: 50,
                ..DownstreamConfig::default()
            },
            grid: GridConfig {
                bins: vec![15],
                labeled_sizes: vec![50, 100, 200],
                seeds: vec![1, 2, 3, 4, 5],
                methods: vec![Method::Proposed, Method::BaselineA],
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.downstream.validate()?;
        let g = &self.grid;
        if g.bins.is_empty() || g.bins.contains(&0) {
            return Err(Error::Config("grid.bins must list positive bin counts".into()));
        }
        if g.labeled_sizes.is_empty() || g.labeled_sizes.contains(&0) {
            return Err(Error::Config("grid.labeled_sizes must list positive sizes".into()));
        }
        if g.seeds.is_empty() || g.methods.is_empty() {
            return Err(Error::Config("grid.seeds and grid.methods must be non-empty".into()));
        }
        let largest = g.labeled_sizes.iter().copied().max().unwrap_or(0);
        if largest > self.data.labeled_size {
            return Err(Error::Config(format!(
                "grid asks for {largest} labeled samples but data.labeled_size is {}",
                self.data.labeled_size
            )));
        }
        if self.data.validation_size == 0 {
            return Err(Error::Config("data.validation_size must be positive".into()));
        }
        if g.methods.contains(&Method::Proposed) && self.data.pretrain_size == 0 {
            return Err(Error::Config("the proposed method needs data.pretrain_size > 0".into()));
        }
        Ok(())
    }

    /// `output_dir`, unless overridden by the environment.
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.output_dir.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.pretrain.iterations, 3000);
        assert_eq!(cfg.pretrain.batch_size, 64);
        assert_eq!(cfg.downstream.batch_size, 32);
        assert!((cfg.downstream.lr_encoder - 5e-5).abs() < 1e-18);
        assert_eq!(cfg.data.pretrain_size, 3000);
        assert_eq!(cfg.data.validation_size, 1480);
        cfg.validate().unwrap();
        ExperimentConfig::desk_scale().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_sections() {
        let cfg = ExperimentConfig::desk_scale();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial = ExperimentConfig::from_toml("[pretrain]\niterations = 5\n").unwrap();
        assert_eq!(partial.pretrain.iterations, 5);
        assert_eq!(partial.scene, SceneConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_grids() {
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1\n"), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml("[scene]\nnum_antenas = 4\n").is_err());
        assert!(ExperimentConfig::from_toml("[grid]\nlabeled_sizes = [5000]\n").is_err());
        assert!(ExperimentConfig::from_toml("[grid]\nmethods = [\"magic\"]\n").is_err());
        let ok = ExperimentConfig::from_toml("[grid]\nmethods = [\"baseline-a\", \"sscl\"]\n").unwrap();
        assert_eq!(ok.grid.methods, vec![Method::BaselineA, Method::Sscl]);
    }

    #[test]
    fn method_names() {
        for m in [Method::Proposed, Method::BaselineA, Method::Sscl, Method::HardEm] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("x".parse::<Method>().is_err());
    }
}
