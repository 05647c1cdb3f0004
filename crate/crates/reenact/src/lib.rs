//! One-shot face reenactment on the CPU.
//!
//! Given a source image (expression donor) and a target image (identity and
//! background donor), the generator synthesizes the target's face wearing the
//! source's expression. The pieces:
//!
//! - [`geometry`] — landmark sets, similarity-transform alignment, boundary-map
//!   rasterization.
//! - [`autodiff`] — a small reverse-mode tape over dense `f64` tensors; every
//!   network in this crate trains through it.
//! - [`model`] — the dual-FPN encoder/decoder generator and the
//!   landmark-conditioned discriminator.
//! - [`losses`] — identity, perceptual and relativistic-average least-squares
//!   adversarial objectives, plus the pluggable feature-extractor registry.
//! - [`metrics`] — NMSE, CSIM and FID evaluation with JSON reports.
//! - [`data`] — dataset manifests, scenario-aware pair sampling and a
//!   procedural synthetic-face renderer with exact landmarks.
//! - [`training`] — the alternating adversarial loop with Adam, the linear LR
//!   decay schedule and restartable checkpoints.
//! - [`cli`] — the `reenact` binary's subcommands.
//!
//! Data-parallel inner loops (convolutions, warps, rasterization, batch
//! evaluation) run on rayon when the default `parallel` feature is enabled and
//! fall back to equivalent sequential code without it; results are bit-identical
//! either way.

pub mod archive;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod geometry;
pub mod image_io;
pub mod losses;
pub mod metrics;
pub mod model;
pub(crate) mod par;
pub mod tensor;
pub mod training;

pub use tensor::Tensor;
