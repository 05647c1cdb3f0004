//! The flat `key = value` run configuration: one dotted key per line,
//! `#` comments, defaults for everything. The canonical serialization feeds
//! the config digest that ties checkpoints to their settings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{scenario_from_fields, Scenario};
use crate::geometry::BoundaryConfig;
use crate::losses::LossWeights;
use crate::model::{DiscriminatorConfig, GeneratorConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config key {key}: cannot parse {value:?}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub seed: u64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub decay_start_epoch: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Checkpoint every this many epochs (plus one at the end).
    pub checkpoint_interval: usize,
    pub loss_weights: LossWeights,
    pub identity_extractor: String,
    pub perceptual_extractor: String,
    pub generator: GeneratorConfig,
    pub discriminator_widths: [usize; 5],
    pub discriminator_leaky_slope: f64,
    pub discriminator_norm_eps: f64,
    pub boundary: BoundaryConfig,
    pub scenario: Scenario,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr_initial: 1e-4,
            lr_final: 1e-7,
            decay_start_epoch: 40,
            total_epochs: 100,
            batch_size: 1,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_interval: 10,
            loss_weights: LossWeights::default(),
            identity_extractor: "default-identity".to_string(),
            perceptual_extractor: "default-perceptual".to_string(),
            generator: GeneratorConfig::default(),
            discriminator_widths: [32, 64, 128, 256, 1],
            discriminator_leaky_slope: 0.2,
            discriminator_norm_eps: 1e-5,
            boundary: BoundaryConfig::default(),
            scenario: Scenario::ManyToMany,
        }
    }
}

impl TrainingConfig {
    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            input_channels: 3 + self.boundary.channels,
            widths: self.discriminator_widths,
            leaky_slope: self.discriminator_leaky_slope,
            norm_eps: self.discriminator_norm_eps,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lr_final > self.lr_initial {
            return Err(ConfigError::Invalid("lr_final must not exceed lr_initial".into()));
        }
        if self.total_epochs > 0 && self.decay_start_epoch >= self.total_epochs {
            return Err(ConfigError::Invalid(
                "decay_start_epoch must be below total_epochs".into(),
            ));
        }
        if self.batch_size != 1 {
            return Err(ConfigError::Invalid(
                "instance-normalized training runs one pair per propagation; batch_size must be 1"
                    .into(),
            ));
        }
        if self.checkpoint_interval == 0 {
            return Err(ConfigError::Invalid("checkpoint_interval must be positive".into()));
        }
        self.generator
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.discriminator_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.boundary
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.loss_weights
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Canonical `key = value` serialization, fixed key order.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let g = &self.generator;
        let csv = |xs: &[usize]| {
            xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "scenario.kind = {}", self.scenario.kind_name());
        match &self.scenario {
            Scenario::ManyToMany => {}
            Scenario::OneToOne { identity } => {
                let _ = writeln!(s, "scenario.identity = {identity}");
            }
            Scenario::OneToAnother { source, target } => {
                let _ = writeln!(s, "scenario.source = {source}");
                let _ = writeln!(s, "scenario.target = {target}");
            }
        }
        let _ = writeln!(s, "train.lr_initial = {}", self.lr_initial);
        let _ = writeln!(s, "train.lr_final = {}", self.lr_final);
        let _ = writeln!(s, "train.decay_start_epoch = {}", self.decay_start_epoch);
        let _ = writeln!(s, "train.total_epochs = {}", self.total_epochs);
        let _ = writeln!(s, "train.batch_size = {}", self.batch_size);
        let _ = writeln!(s, "train.adam_beta1 = {}", self.adam_beta1);
        let _ = writeln!(s, "train.adam_beta2 = {}", self.adam_beta2);
        let _ = writeln!(s, "train.adam_eps = {}", self.adam_eps);
        let _ = writeln!(s, "train.checkpoint_interval = {}", self.checkpoint_interval);
        let _ = writeln!(s, "loss.lambda_content = {}", self.loss_weights.lambda_content);
        let _ = writeln!(s, "loss.lambda_adv = {}", self.loss_weights.lambda_adv);
        let _ = writeln!(s, "loss.lambda_identity = {}", self.loss_weights.lambda_identity);
        let _ = writeln!(s, "loss.identity_extractor = {}", self.identity_extractor);
        let _ = writeln!(s, "loss.perceptual_extractor = {}", self.perceptual_extractor);
        let _ = writeln!(s, "generator.crop_size = {}", g.crop_size);
        let _ = writeln!(s, "generator.lateral_channels = {}", g.lateral_channels);
        let _ = writeln!(s, "generator.backbone = {}", g.backbone);
        let _ = writeln!(s, "generator.backbone_widths = {}", csv(&g.backbone_widths));
        let _ = writeln!(s, "generator.decoder_channels = {}", csv(&g.decoder_channels));
        let _ = writeln!(s, "generator.share_encoders = {}", g.share_encoders);
        let _ = writeln!(s, "discriminator.widths = {}", csv(&self.discriminator_widths));
        let _ = writeln!(s, "discriminator.leaky_slope = {}", self.discriminator_leaky_slope);
        let _ = writeln!(s, "discriminator.norm_eps = {}", self.discriminator_norm_eps);
        let _ = writeln!(s, "boundary.channels = {}", self.boundary.channels);
        let _ = writeln!(s, "boundary.line_width = {}", self.boundary.line_width);
        s
    }

    /// SHA-256 of the canonical serialization, shortened for display.
    pub fn digest(&self) -> String {
        text_digest(&self.serialize())
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.serialize())
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Apply `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut scenario_kind: Option<String> = None;
        let mut scenario_identity: Option<String> = None;
        let mut scenario_source: Option<String> = None;
        let mut scenario_target: Option<String> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: idx + 1, text: raw.to_string() });
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |reason: &str| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: reason.to_string(),
            };
            macro_rules! parse_to {
                ($target:expr) => {
                    $target = value.parse().map_err(|e| bad(&format!("{e}")))?
                };
            }
            match key {
                "seed" => parse_to!(cfg.seed),
                "scenario.kind" => scenario_kind = Some(value.to_string()),
                "scenario.identity" => scenario_identity = Some(value.to_string()),
                "scenario.source" => scenario_source = Some(value.to_string()),
                "scenario.target" => scenario_target = Some(value.to_string()),
                "train.lr_initial" => parse_to!(cfg.lr_initial),
                "train.lr_final" => parse_to!(cfg.lr_final),
                "train.decay_start_epoch" => parse_to!(cfg.decay_start_epoch),
                "train.total_epochs" => parse_to!(cfg.total_epochs),
                "train.batch_size" => parse_to!(cfg.batch_size),
                "train.adam_beta1" => parse_to!(cfg.adam_beta1),
                "train.adam_beta2" => parse_to!(cfg.adam_beta2),
                "train.adam_eps" => parse_to!(cfg.adam_eps),
                "train.checkpoint_interval" => parse_to!(cfg.checkpoint_interval),
                "loss.lambda_content" => parse_to!(cfg.loss_weights.lambda_content),
                "loss.lambda_adv" => parse_to!(cfg.loss_weights.lambda_adv),
                "loss.lambda_identity" => parse_to!(cfg.loss_weights.lambda_identity),
                "loss.identity_extractor" => cfg.identity_extractor = value.to_string(),
                "loss.perceptual_extractor" => cfg.perceptual_extractor = value.to_string(),
                "generator.crop_size" => parse_to!(cfg.generator.crop_size),
                "generator.lateral_channels" => parse_to!(cfg.generator.lateral_channels),
                "generator.backbone" => cfg.generator.backbone = value.to_string(),
                "generator.backbone_widths" => {
                    cfg.generator.backbone_widths = parse_widths5(value).map_err(|r| bad(&r))?
                }
                "generator.decoder_channels" => {
                    cfg.generator.decoder_channels = parse_csv(value).map_err(|r| bad(&r))?
                }
                "generator.share_encoders" => parse_to!(cfg.generator.share_encoders),
                "discriminator.widths" => {
                    cfg.discriminator_widths = parse_widths5(value).map_err(|r| bad(&r))?
                }
                "discriminator.leaky_slope" => parse_to!(cfg.discriminator_leaky_slope),
                "discriminator.norm_eps" => parse_to!(cfg.discriminator_norm_eps),
                "boundary.channels" => parse_to!(cfg.boundary.channels),
                "boundary.line_width" => parse_to!(cfg.boundary.line_width),
                other => {
                    return Err(ConfigError::UnknownKey { line: idx + 1, key: other.to_string() })
                }
            }
        }
        if let Some(kind) = scenario_kind {
            cfg.scenario = scenario_from_fields(
                &kind,
                scenario_identity.as_deref(),
                scenario_source.as_deref(),
                scenario_target.as_deref(),
            )
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(cfg)
    }
}

/// Shortened SHA-256 of a canonical settings text.
pub fn text_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let full = hasher.finalize();
    full.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn parse_csv(value: &str) -> Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_widths5(value: &str) -> Result<[usize; 5], String> {
    let v = parse_csv(value)?;
    v.try_into().map_err(|v: Vec<usize>| format!("expected 5 widths, got {}", v.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_flat_format() {
        let cfg = TrainingConfig::default();
        let text = cfg.serialize();
        let back = TrainingConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.digest(), back.digest());
    }

    #[test]
    fn overrides_apply_on_top_of_defaults() {
        let cfg = TrainingConfig::parse(
            "# comment\n\
             train.total_epochs = 12\n\
             generator.crop_size = 64\n\
             generator.decoder_channels = 8, 8\n\
             scenario.kind = one-to-one\n\
             scenario.identity = id03\n",
        )
        .unwrap();
        assert_eq!(cfg.total_epochs, 12);
        assert_eq!(cfg.generator.crop_size, 64);
        assert_eq!(cfg.generator.decoder_channels, vec![8, 8]);
        assert_eq!(cfg.scenario, Scenario::OneToOne { identity: "id03".into() });
        // Untouched keys stay default.
        assert_eq!(cfg.lr_initial, 1e-4);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            TrainingConfig::parse("train.warmup = 3\n"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            TrainingConfig::parse("train.total_epochs = soon\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            TrainingConfig::parse("no equals sign"),
            Err(ConfigError::Syntax { .. })
        ));
    }

    #[test]
    fn digest_tracks_content() {
        let a = TrainingConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
    }

    #[test]
    fn validation_rules() {
        let mut c = TrainingConfig::default();
        c.batch_size = 4;
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::default();
        c.decay_start_epoch = 100;
        assert!(c.validate().is_err());
        // Epoch-free runs skip the decay check entirely.
        c.total_epochs = 0;
        assert!(c.validate().is_ok());
        let mut c = TrainingConfig::default();
        c.lr_final = 1.0;
        assert!(c.validate().is_err());
    }
}
