//! Experiment configuration.
//!
//! A run is reproducible from the config document plus one seed. The file is
//! TOML with a `version` field and unknown keys rejected. All derived
//! randomness comes from the master seed: data uses seed, split seed+1,
//! model init seed+2, the training loop seed+3, and evaluation perturbations
//! default to seed+4.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aca::{AcaConfig, AcaRule};
use crate::boostloss::AblationSpec;
use crate::data::{PerturbationSpec, SyntheticModalitySpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{EncoderSpec, EnsembleMode};
use crate::optim::OptimConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Sub-seeds derived from the master run seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedPlan {
    pub data: u64,
    pub split: u64,
    pub init: u64,
    pub train_loop: u64,
    pub perturb: u64,
}

impl SeedPlan {
    pub fn new(seed: u64) -> Self {
        SeedPlan {
            data: seed,
            split: seed.wrapping_add(1),
            init: seed.wrapping_add(2),
            train_loop: seed.wrapping_add(3),
            perturb: seed.wrapping_add(4),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub eval_every_epochs: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub ensemble_mode: EnsembleMode,
    /// When false the run degenerates to plain joint cross-entropy training:
    /// one classifier per modality, no residual/ensemble terms, no ACA.
    #[serde(default = "default_true")]
    pub boosting: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub aca: AcaSection,
    #[serde(default)]
    pub ablation: AblationSpec,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic { n: usize, k: usize, modalities: Vec<SyntheticModalitySpec> },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub classifier_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { encoder_hidden: vec![32], feature_dim: 16, classifier_hidden: 256 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcaSection {
    pub enabled: bool,
    pub sigma: f64,
    pub tau: f64,
    /// Check cadence in epochs; converted to iterations per run.
    pub period_epochs: usize,
    pub max_classifiers: Option<usize>,
    pub rule: AcaRule,
}

impl Default for AcaSection {
    fn default() -> Self {
        AcaSection {
            enabled: true,
            sigma: 1.0,
            tau: 0.01,
            period_epochs: 2,
            max_classifiers: Some(6),
            rule: AcaRule::Text,
        }
    }
}

impl AcaSection {
    pub fn to_aca_config(&self, batches_per_epoch: usize) -> AcaConfig {
        AcaConfig {
            sigma: self.sigma,
            tau: self.tau,
            period: (self.period_epochs * batches_per_epoch).max(1),
            max_classifiers: self.max_classifiers,
            rule: self.rule,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { train_frac: 0.7, val_frac: 0.15 }
    }
}

fn default_batch_size() -> usize {
    64
}

fn default_one() -> usize {
    1
}

fn default_lambda() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Desk-scale default: imbalanced two-modality synthetic data.
    pub fn default_synthetic() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: None,
            epochs: 24,
            batch_size: 64,
            eval_every_epochs: 2,
            lambda: 0.5,
            ensemble_mode: EnsembleMode::Mean,
            boosting: true,
            output_dir: None,
            dataset: DatasetConfig::Synthetic {
                n: 2000,
                k: 6,
                modalities: vec![
                    SyntheticModalitySpec {
                        name: "audio".to_string(),
                        dim: 16,
                        separation: 3.0,
                        noise: 1.0,
                    },
                    SyntheticModalitySpec {
                        name: "video".to_string(),
                        dim: 16,
                        separation: 1.0,
                        noise: 1.0,
                    },
                ],
            },
            model: ModelSection::default(),
            optim: OptimConfig::default(),
            aca: AcaSection::default(),
            ablation: AblationSpec::default(),
            split: SplitSection::default(),
            perturbation: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        if self.eval_every_epochs == 0 {
            return Err(Error::Config("eval_every_epochs must be >= 1".to_string()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0,1], got {}", self.lambda)));
        }
        if self.model.feature_dim == 0 || self.model.classifier_hidden == 0 {
            return Err(Error::Config("model dims must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.split.train_frac)
            || !(0.0..=1.0).contains(&self.split.val_frac)
            || self.split.train_frac + self.split.val_frac > 1.0
        {
            return Err(Error::Config(format!(
                "bad split fractions train={} val={}",
                self.split.train_frac, self.split.val_frac
            )));
        }
        self.optim.validate()?;
        self.ablation.validate()?;
        // sigma/tau/rule checks; period is resolved per run
        self.aca.to_aca_config(1).validate()?;
        if let DatasetConfig::Synthetic { n, k, modalities } = &self.dataset {
            // seed is irrelevant to structural validation
            SyntheticSpec { n: *n, k: *k, modalities: modalities.clone(), seed: 0 }
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(p) = &self.perturbation {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Seed for the run; train requires one.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a seed is required (set --seed)".to_string()))
    }

    /// Encoder specs per dataset modality, in dataset order.
    pub fn encoder_specs(&self, modalities: &[crate::data::ModalityMeta]) -> Vec<(String, EncoderSpec)> {
        modalities
            .iter()
            .map(|m| {
                (
                    m.name.clone(),
                    EncoderSpec::mlp(m.dim, &self.model.encoder_hidden, self.model.feature_dim),
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default_synthetic();
        cfg.seed = Some(7);
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.seed, Some(7));
        assert_eq!(back.epochs, cfg.epochs);
        assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"
version = 1
epochs = 2
frobnicate = true

[dataset]
source = "file"
path = "x.mmfeat"
"#;
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("frobnicate"));
    }

    #[test]
    fn version_checked() {
        let mut cfg = ExperimentConfig::default_synthetic();
        cfg.version = 2;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn minimal_file_config_parses_with_defaults() {
        let text = r#"
version = 1
epochs = 5

[dataset]
source = "file"
path = "features.mmfeat"
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.lambda, 0.5);
        assert!(cfg.boosting);
        assert_eq!(cfg.aca.period_epochs, 2);
        assert_eq!(cfg.optim.lr, 1e-2);
    }

    #[test]
    fn bad_lambda_and_fractions_rejected() {
        let mut cfg = ExperimentConfig::default_synthetic();
        cfg.lambda = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default_synthetic();
        cfg.split.train_frac = 0.9;
        cfg.split.val_frac = 0.2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn aca_period_scales_with_batches() {
        let cfg = ExperimentConfig::default_synthetic();
        let aca = cfg.aca.to_aca_config(22);
        assert_eq!(aca.period, 44);
    }
}
