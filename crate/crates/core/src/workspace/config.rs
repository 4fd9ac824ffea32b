use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::boundary::SvmConfig;
use crate::evaluation::metrics::SwdConfig;
use crate::inversion::InversionConfig;
use crate::perception::FeatureTrainingConfig;
use crate::synthesis::GeneratorConfig;
use crate::training::loops::{GanConfig, TrainingConfig};

use super::dataset::{DatasetSpec, SyntheticSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Relative paths below are resolved against this directory.
    pub root: PathBuf,
    pub checkpoint: PathBuf,
    pub logs: PathBuf,
}

impl OutputPaths {
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join(&self.checkpoint)
    }

    pub fn log_dir(&self) -> PathBuf {
        self.root.join(&self.logs)
    }
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths { root: PathBuf::from("idinv-work"), checkpoint: "checkpoint".into(), logs: "logs".into() }
    }
}

/// One JSON document describing a whole pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub features: FeatureTrainingConfig,
    pub gan: GanConfig,
    pub training: TrainingConfig,
    pub inversion: InversionConfig,
    pub swd: SwdConfig,
    pub svm: SvmConfig,
    pub output: OutputPaths,
}

impl ExperimentConfig {
    /// The 32×32 profile with a 5000-image synthetic set.
    pub fn desk(seed: u64) -> Self {
        Self::for_generator(GeneratorConfig::desk(), 5000, seed)
    }

    pub fn for_generator(generator: GeneratorConfig, count: usize, seed: u64) -> Self {
        let dataset = DatasetSpec::Synthetic { spec: SyntheticSpec::new(generator.resolution, count), seed };
        let levels = generator.resolution.trailing_zeros() as usize - 2;
        let width = generator.feature_maps[0];
        ExperimentConfig {
            dataset,
            features: FeatureTrainingConfig { feature_maps: vec![width; levels + 1], seed, ..Default::default() },
            gan: GanConfig { seed, ..GanConfig::new(generator, 20_000) },
            training: TrainingConfig { seed, ..Default::default() },
            inversion: InversionConfig { seed, ..Default::default() },
            swd: SwdConfig { seed, ..Default::default() },
            svm: SvmConfig { seed, ..Default::default() },
            output: OutputPaths::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| crate::error::invalid(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(format!("config {}", path.display())),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSpec::Synthetic { spec, .. } = &self.dataset {
            spec.validate()?;
            crate::error::ensure_arg!(
                spec.resolution == self.gan.generator.resolution,
                "dataset resolution {} differs from generator resolution {}",
                spec.resolution,
                self.gan.generator.resolution
            );
        }
        self.gan.validate()?;
        self.inversion.validate()
    }
}
