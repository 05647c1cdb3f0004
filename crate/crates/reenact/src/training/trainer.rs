//! The alternating adversarial loop and its exactly restorable state.
//!
//! Each step: render the source's boundary map, update the critic on
//! (real = source ⊕ map, fake = detached generation ⊕ map), then update the
//! generator through the frozen critic plus the perceptual and identity
//! terms, one pair per propagation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive;
use crate::autodiff::{Gradients, Graph};
use crate::data::{DatasetManifest, PairSampler, ScenarioSpec};
use crate::geometry::{boundary_map_for, LandmarkSet};
use crate::losses::{
    create_extractor, identity_loss_node, perceptual_loss_node, ralsgan_discriminator_node,
    ralsgan_generator_node, total_loss_node, FeatureExtractor, LossBreakdown,
};
use crate::model::params;
use crate::model::{expect_image, Discriminator, Generator};
use crate::tensor::Tensor;

use super::config::TrainingConfig;
use super::optimizer::Adam;
use super::{lr_schedule, TrainError};

pub const CHECKPOINT_META: &str = "meta.json";

const GENERATOR_SEED_SALT: u64 = 0x47454e;
const DISCRIMINATOR_SEED_SALT: u64 = 0x44495343;

/// Online means of the loss terms seen so far.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMeans {
    pub count: u64,
    pub identity: f64,
    pub content: f64,
    pub adversarial: f64,
    pub total: f64,
    pub discriminator: f64,
}

impl RunningMeans {
    fn update(&mut self, b: &LossBreakdown, d_loss: f64) {
        self.count += 1;
        let n = self.count as f64;
        self.identity += (b.identity - self.identity) / n;
        self.content += (b.content - self.content) / n;
        self.adversarial += (b.adversarial - self.adversarial) / n;
        self.total += (b.total - self.total) / n;
        self.discriminator += (d_loss - self.discriminator) / n;
    }
}

/// Everything that defines the trajectory: models, optimizer moments,
/// sampler position and counters. Serializes to a checkpoint directory and
/// restores bit-identically.
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    pub sampler_word_pos: u128,
    pub running: RunningMeans,
}

impl TrainState {
    pub fn fresh(cfg: &TrainingConfig) -> Result<Self, TrainError> {
        Ok(Self {
            epoch: 0,
            step: 0,
            generator: Generator::new(
                cfg.generator.clone(),
                cfg.seed ^ GENERATOR_SEED_SALT,
            )?,
            discriminator: Discriminator::new(
                cfg.discriminator_config(),
                cfg.seed ^ DISCRIMINATOR_SEED_SALT,
            )?,
            gen_opt: Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            disc_opt: Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            sampler_word_pos: 0,
            running: RunningMeans::default(),
        })
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub identity: f64,
    pub content: f64,
    pub adversarial: f64,
    pub total: f64,
    pub discriminator: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,lr,L_identity,L_content,L_adv,L_total,L_D";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.lr,
            self.identity,
            self.content,
            self.adversarial,
            self.total,
            self.discriminator
        )
    }
}

fn stack_channels(image: &Tensor, cond: &Tensor) -> Tensor {
    let (h, w) = (image.height(), image.width());
    debug_assert_eq!((cond.height(), cond.width()), (h, w));
    let mut data = Vec::with_capacity((image.channels() + cond.channels()) * h * w);
    data.extend_from_slice(image.data());
    data.extend_from_slice(cond.data());
    Tensor::new(vec![image.channels() + cond.channels(), h, w], data)
}

fn grads_by_name(g: &Graph, grads: &Gradients) -> BTreeMap<String, Tensor> {
    g.param_names()
        .map(|n| (n.to_string(), grads.for_param(g, n)))
        .collect()
}

/// One alternating update on a source/target pair. The boundary map comes
/// from the source's landmarks; the critic trains on the detached
/// generation, then the generator trains through the frozen critic.
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainingConfig,
    identity_extractor: &dyn FeatureExtractor,
    perceptual_extractor: &dyn FeatureExtractor,
    src: &Tensor,
    tgt: &Tensor,
    src_landmarks: &LandmarkSet,
    lr: f64,
) -> Result<(LossBreakdown, f64), TrainError> {
    let n = cfg.generator.crop_size;
    expect_image(src, n, "train source")?;
    expect_image(tgt, n, "train target")?;
    let cond = boundary_map_for(src_landmarks, n, &cfg.boundary)?.to_tensor();
    let real_input = stack_channels(src, &cond);
    step_with_cached(
        state,
        cfg,
        identity_extractor,
        perceptual_extractor,
        src,
        tgt,
        &cond,
        &real_input,
        lr,
    )
}

#[allow(clippy::too_many_arguments)]
fn step_with_cached(
    state: &mut TrainState,
    cfg: &TrainingConfig,
    identity_extractor: &dyn FeatureExtractor,
    perceptual_extractor: &dyn FeatureExtractor,
    src: &Tensor,
    tgt: &Tensor,
    cond: &Tensor,
    real_input: &Tensor,
    lr: f64,
) -> Result<(LossBreakdown, f64), TrainError> {
    let step = state.step + 1;

    // Critic half-step on the detached generation.
    let fake = state.generator.generate(src, tgt)?;
    let fake_input = stack_channels(&fake, cond);
    let mut g = Graph::new();
    let real_node = g.input(real_input.clone());
    let fake_node = g.input(fake_input);
    let d_real = state.discriminator.forward(&mut g, real_node);
    let d_fake = state.discriminator.forward(&mut g, fake_node);
    let d_loss_node = ralsgan_discriminator_node(&mut g, d_real, d_fake);
    let d_loss = g.value(d_loss_node).item();
    if !d_loss.is_finite() {
        return Err(TrainError::NonFinite { term: "discriminator", step });
    }
    let d_grads = g.backward(d_loss_node);
    let d_grad_map = grads_by_name(&g, &d_grads);
    state.disc_opt.step(&mut state.discriminator, &d_grad_map, lr);

    // Generator half-step through the freshly updated, frozen critic.
    let mut g = Graph::new();
    let src_node = g.input(src.clone());
    let tgt_node = g.input(tgt.clone());
    let generated = state.generator.forward(&mut g, src_node, tgt_node);
    let cond_node = g.input(cond.clone());
    let fake_stack = g.concat_channels(&[generated, cond_node]);
    let real_node = g.input(real_input.clone());
    let d_real = state.discriminator.forward_frozen(&mut g, real_node);
    let d_fake = state.discriminator.forward_frozen(&mut g, fake_stack);
    let adversarial = ralsgan_generator_node(&mut g, d_real, d_fake);
    let e_gen = identity_extractor.forward(&mut g, generated);
    let e_tgt = identity_extractor.forward(&mut g, tgt_node);
    let identity = identity_loss_node(&mut g, e_gen, e_tgt);
    let f_gen = perceptual_extractor.forward(&mut g, generated);
    let f_tgt = perceptual_extractor.forward(&mut g, tgt_node);
    let content = perceptual_loss_node(&mut g, f_gen, f_tgt);
    let total = total_loss_node(&mut g, identity, content, adversarial, &cfg.loss_weights);

    let breakdown = LossBreakdown {
        identity: g.value(identity).item(),
        content: g.value(content).item(),
        adversarial: g.value(adversarial).item(),
        total: g.value(total).item(),
    };
    for (term, v) in [
        ("identity", breakdown.identity),
        ("content", breakdown.content),
        ("adversarial", breakdown.adversarial),
        ("total", breakdown.total),
    ] {
        if !v.is_finite() {
            return Err(TrainError::NonFinite { term, step });
        }
    }
    let g_grads = g.backward(total);
    let g_grad_map = grads_by_name(&g, &g_grads);
    state.gen_opt.step(&mut state.generator, &g_grad_map, lr);

    state.step = step;
    state.running.update(&breakdown, d_loss);
    Ok((breakdown, d_loss))
}

struct EntrySlot {
    image: Tensor,
    cond: Tensor,
    real_input: Tensor,
}

/// Owns the state, data cache and sampler of one training run.
pub struct Trainer {
    cfg: TrainingConfig,
    identity_extractor: Box<dyn FeatureExtractor>,
    perceptual_extractor: Box<dyn FeatureExtractor>,
    sampler: PairSampler,
    entries: Vec<EntrySlot>,
    state: TrainState,
}

impl Trainer {
    pub fn new(manifest: &DatasetManifest, cfg: TrainingConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let state = TrainState::fresh(&cfg)?;
        Self::with_state(manifest, cfg, state)
    }

    /// Continue from a checkpoint directory; the checkpoint's own config
    /// governs the run.
    pub fn resume(manifest: &DatasetManifest, checkpoint: &Path) -> Result<Self, TrainError> {
        let (cfg, state) = load_checkpoint(checkpoint)?;
        Self::with_state(manifest, cfg, state)
    }

    fn with_state(
        manifest: &DatasetManifest,
        cfg: TrainingConfig,
        state: TrainState,
    ) -> Result<Self, TrainError> {
        let spec = ScenarioSpec { scenario: cfg.scenario.clone(), seed: cfg.seed };
        let mut sampler = PairSampler::new(manifest, &spec)?;
        sampler.set_rng_word_pos(state.sampler_word_pos);
        let n = cfg.generator.crop_size;
        let mut entries = Vec::with_capacity(manifest.len());
        for i in 0..manifest.len() {
            let (image, landmarks) = manifest.load_entry(i)?;
            expect_image(&image, n, &format!("manifest entry {i}"))?;
            let cond = boundary_map_for(&landmarks, n, &cfg.boundary)?.to_tensor();
            let real_input = stack_channels(&image, &cond);
            entries.push(EntrySlot { image, cond, real_input });
        }
        let identity_extractor = create_extractor(&cfg.identity_extractor)?;
        let perceptual_extractor = create_extractor(&cfg.perceptual_extractor)?;
        Ok(Self { cfg, identity_extractor, perceptual_extractor, sampler, entries, state })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    /// Run the remaining epochs (one pass samples `manifest.len()` pairs per
    /// epoch). Checkpoints land under `checkpoint_dir` at every interval and
    /// as `final` when done.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<Vec<StepLog>, TrainError> {
        let mut logs = Vec::new();
        let pairs_per_epoch = self.entries.len();
        while self.state.epoch < self.cfg.total_epochs {
            let lr = lr_schedule(self.state.epoch, &self.cfg);
            for _ in 0..pairs_per_epoch {
                let (si, ti) = self.sampler.next_indices();
                let src = self.entries[si].image.clone();
                let tgt = self.entries[ti].image.clone();
                let cond = self.entries[si].cond.clone();
                let real_input = self.entries[si].real_input.clone();
                let (breakdown, d_loss) = step_with_cached(
                    &mut self.state,
                    &self.cfg,
                    self.identity_extractor.as_ref(),
                    self.perceptual_extractor.as_ref(),
                    &src,
                    &tgt,
                    &cond,
                    &real_input,
                    lr,
                )?;
                logs.push(StepLog {
                    step: self.state.step,
                    lr,
                    identity: breakdown.identity,
                    content: breakdown.content,
                    adversarial: breakdown.adversarial,
                    total: breakdown.total,
                    discriminator: d_loss,
                });
            }
            self.state.epoch += 1;
            self.state.sampler_word_pos = self.sampler.rng_word_pos();
            if let Some(dir) = checkpoint_dir {
                if self.state.epoch % self.cfg.checkpoint_interval == 0
                    && self.state.epoch < self.cfg.total_epochs
                {
                    let name = format!("epoch_{:04}", self.state.epoch);
                    save_checkpoint(&self.state, &self.cfg, &dir.join(name))?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(&self.state, &self.cfg, &dir.join("final"))?;
        }
        Ok(logs)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    epoch: usize,
    step: u64,
    config_digest: String,
    sampler_word_pos: String,
    running: RunningMeans,
}

/// Write models, optimizer moments, config and counters into `dir`.
pub fn save_checkpoint(
    state: &TrainState,
    cfg: &TrainingConfig,
    dir: &Path,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)
        .map_err(|source| TrainError::Io { path: dir.to_path_buf(), source })?;
    cfg.save(&dir.join("config.txt"))?;
    archive::save(&dir.join("generator.json"), &params::collect(&state.generator))?;
    archive::save(&dir.join("discriminator.json"), &params::collect(&state.discriminator))?;
    archive::save(&dir.join("opt_generator.json"), &state.gen_opt.to_tensors())?;
    archive::save(&dir.join("opt_discriminator.json"), &state.disc_opt.to_tensors())?;
    let meta = CheckpointMeta {
        format: "checkpoint-v1".to_string(),
        epoch: state.epoch,
        step: state.step,
        config_digest: cfg.digest(),
        sampler_word_pos: state.sampler_word_pos.to_string(),
        running: state.running.clone(),
    };
    let path = dir.join(CHECKPOINT_META);
    std::fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes"))
        .map_err(|source| TrainError::Io { path, source })?;
    Ok(())
}

/// Restore a checkpoint directory into a config and state.
pub fn load_checkpoint(dir: &Path) -> Result<(TrainingConfig, TrainState), TrainError> {
    let cfg = TrainingConfig::load(&dir.join("config.txt"))?;
    cfg.validate()?;
    let meta_path = dir.join(CHECKPOINT_META);
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|source| TrainError::Io { path: meta_path.clone(), source })?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_text).map_err(|e| {
        TrainError::Checkpoint { path: meta_path.clone(), message: e.to_string() }
    })?;
    if meta.format != "checkpoint-v1" {
        return Err(TrainError::Checkpoint {
            path: meta_path.clone(),
            message: format!("unsupported format {:?}", meta.format),
        });
    }
    if meta.config_digest != cfg.digest() {
        return Err(TrainError::DigestMismatch {
            expected: meta.config_digest,
            actual: cfg.digest(),
        });
    }
    let mut state = TrainState::fresh(&cfg)?;
    params::load(&mut state.generator, &archive::load(&dir.join("generator.json"))?)?;
    params::load(&mut state.discriminator, &archive::load(&dir.join("discriminator.json"))?)?;
    state.gen_opt = Adam::from_tensors(
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        &archive::load(&dir.join("opt_generator.json"))?,
    );
    state.disc_opt = Adam::from_tensors(
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        &archive::load(&dir.join("opt_discriminator.json"))?,
    );
    state.epoch = meta.epoch;
    state.step = meta.step;
    state.sampler_word_pos = meta.sampler_word_pos.parse().map_err(|_| {
        TrainError::Checkpoint {
            path: meta_path,
            message: "sampler_word_pos is not a u128".to_string(),
        }
    })?;
    state.running = meta.running;
    Ok((cfg, state))
}
