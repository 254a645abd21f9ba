//! Experiment configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use arob_core::attribution::AttributionConfig;
use arob_core::nn::NetworkSpec;
use arob_core::phantom::PhantomConfig;
use arob_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_per_class: 10,
            val_per_class: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub top_k: usize,
    /// Region whose top-k membership is counted in the report; defaults to
    /// the phantom effect region.
    pub focus_region: Option<u32>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            top_k: 10,
            focus_region: None,
        }
    }
}

/// External atlas replacing the generated phantom parcellation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtlasOverride {
    pub labels: Option<PathBuf>,
    pub table: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub phantom: PhantomConfig,
    pub split: SplitConfig,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub attribution: AttributionConfig,
    pub evaluation: EvaluationConfig,
    pub atlas: AtlasOverride,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("arob-out"),
            phantom: PhantomConfig::default(),
            split: SplitConfig::default(),
            network: NetworkSpec::default(),
            train: TrainConfig::default(),
            attribution: AttributionConfig::default(),
            evaluation: EvaluationConfig::default(),
            atlas: AtlasOverride::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate; a relative `output_dir` is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        for p in [&mut cfg.atlas.labels, &mut cfg.atlas.table]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.phantom.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        if self.phantom.shape != self.network.input_shape {
            return Err(CliError::Usage(format!(
                "phantom shape {:?} differs from network input {:?}",
                self.phantom.shape, self.network.input_shape
            )));
        }
        if self.evaluation.top_k == 0 {
            return Err(CliError::Usage("top_k must be at least 1".into()));
        }
        if self.attribution.lrp.epsilon <= 0.0 {
            return Err(CliError::Usage("lrp.epsilon must be positive".into()));
        }
        self.attribution
            .occlusion
            .validate(self.network.input_shape)?;
        if self.atlas.labels.is_some() != self.atlas.table.is_some() {
            return Err(CliError::Usage(
                "atlas override needs both `labels` and `table`".into(),
            ));
        }
        Ok(())
    }

    pub fn focus_region(&self) -> u32 {
        self.evaluation
            .focus_region
            .unwrap_or(self.phantom.effect_region)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.train.weight_decay, 1e-4);
        assert_eq!(cfg.train.patience, 8);
        assert_eq!(cfg.train.repetitions, 10);
        assert_eq!(cfg.network.dropout, 0.4);
        let filters: Vec<usize> = cfg.network.blocks.iter().map(|b| b.filters).collect();
        let pools: Vec<usize> = cfg.network.blocks.iter().map(|b| b.pool).collect();
        assert_eq!(filters, vec![8, 16, 31, 64]);
        assert_eq!(pools, vec![2, 3, 2, 3]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("[train]\nrepetitions = 3\n").unwrap();
        assert_eq!(cfg.train.repetitions, 3);
        assert_eq!(cfg.phantom, PhantomConfig::default());
    }
}
