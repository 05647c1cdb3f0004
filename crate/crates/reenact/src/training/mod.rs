//! Adversarial training: per-pair alternating updates, the linear
//! learning-rate decay, and exactly restorable checkpoints.

mod config;
mod optimizer;
mod trainer;

pub use config::{text_digest, ConfigError, TrainingConfig};
pub use optimizer::Adam;
pub use trainer::{
    load_checkpoint, save_checkpoint, train_step, RunningMeans, StepLog, TrainState, Trainer,
    CHECKPOINT_META,
};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Archive(#[from] crate::archive::ArchiveError),
    #[error("loss term {term} became non-finite at step {step}")]
    NonFinite { term: &'static str, step: u64 },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint was trained with config digest {expected}, current config digests to {actual}")]
    DigestMismatch { expected: String, actual: String },
}

/// Learning rate for an epoch: flat until `decay_start_epoch`, then linear
/// from `lr_initial` down to `lr_final` at `total_epochs`.
pub fn lr_schedule(epoch: usize, cfg: &TrainingConfig) -> f64 {
    if epoch < cfg.decay_start_epoch {
        return cfg.lr_initial;
    }
    let span = (cfg.total_epochs - cfg.decay_start_epoch) as f64;
    let t = (epoch - cfg.decay_start_epoch) as f64 / span;
    cfg.lr_initial + t * (cfg.lr_final - cfg.lr_initial)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainingConfig {
        TrainingConfig::default()
    }

    #[test]
    fn schedule_is_flat_then_linear() {
        let c = cfg();
        assert_eq!(lr_schedule(0, &c), 1e-4);
        assert_eq!(lr_schedule(39, &c), 1e-4);
        assert_eq!(lr_schedule(40, &c), 1e-4);
        let mid = lr_schedule(70, &c);
        assert!((mid - (1e-4 + 1e-7) / 2.0).abs() < 1e-18, "midpoint {mid}");
        assert!((lr_schedule(100, &c) - 1e-7).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_monotone_nonincreasing_and_continuous() {
        let c = cfg();
        let mut prev = lr_schedule(0, &c);
        for e in 1..=c.total_epochs {
            let lr = lr_schedule(e, &c);
            assert!(lr <= prev + 1e-18, "epoch {e}");
            prev = lr;
        }
        // Continuity at the knee: the first decayed epoch still reads
        // lr_initial exactly.
        assert_eq!(lr_schedule(c.decay_start_epoch, &c), c.lr_initial);
    }
}
