//! Training objectives and the pluggable feature extractors they consume.
//!
//! Three losses drive the generator: an identity loss (squared distance of
//! identity embeddings), a perceptual content loss (mean squared distance of
//! deep features against the target), and the relativistic-average
//! least-squares adversarial loss. Every loss exists twice — as a plain
//! function over values for evaluation, and as a graph builder for training —
//! and the pairs are cross-checked in tests.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, NodeId};
use crate::model::params::Params;
use crate::model::Conv2d;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("score batch is empty")]
    EmptyBatch,
    #[error("loss term {0} is not finite")]
    NonFinite(&'static str),
    #[error("loss weights must be nonnegative")]
    NegativeWeight,
    #[error("extractor outputs differ in shape: {0:?} vs {1:?}")]
    FeatureShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("images differ in shape: {0:?} vs {1:?}")]
    ImageShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("extractor {descriptor:?} produced shape {shape:?} where an embedding vector was expected")]
    NotAnEmbedding { descriptor: String, shape: Vec<usize> },
    #[error("unknown extractor descriptor {0:?}")]
    UnknownExtractor(String),
    #[error("loading extractor weights: {0}")]
    Archive(#[from] crate::archive::ArchiveError),
    #[error("extractor weights: {0}")]
    BadWeights(#[from] crate::model::ModelError),
}

/// Identity feature vector of one face.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityEmbedding {
    vector: Vec<f64>,
}

impl IdentityEmbedding {
    pub fn new(vector: Vec<f64>) -> Self {
        Self { vector }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }
}

/// The λ coefficients of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_content: f64,
    pub lambda_adv: f64,
    pub lambda_identity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_content: 0.01, lambda_adv: 0.001, lambda_identity: 0.001 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.lambda_content < 0.0 || self.lambda_adv < 0.0 || self.lambda_identity < 0.0 {
            return Err(LossError::NegativeWeight);
        }
        Ok(())
    }
}

/// Per-term loss values of one generator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub identity: f64,
    pub content: f64,
    pub adversarial: f64,
    pub total: f64,
}

/// Squared distance between two identity embeddings.
pub fn identity_loss(a: &IdentityEmbedding, b: &IdentityEmbedding) -> Result<f64, LossError> {
    if a.dim() != b.dim() {
        return Err(LossError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Graph form of [`identity_loss`]: `sum((e1 - e2)^2)` over `[D]` nodes.
pub fn identity_loss_node(g: &mut Graph, e1: NodeId, e2: NodeId) -> NodeId {
    let d = g.sub(e1, e2);
    let s = g.square(d);
    g.sum_all(s)
}

/// Mean squared distance between the extractor's features of two images.
pub fn perceptual_loss(
    extractor: &dyn FeatureExtractor,
    a: &Tensor,
    b: &Tensor,
) -> Result<f64, LossError> {
    if a.shape() != b.shape() {
        return Err(LossError::ImageShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    let fa = extractor.extract(a);
    let fb = extractor.extract(b);
    if fa.shape() != fb.shape() {
        return Err(LossError::FeatureShapeMismatch(fa.shape().to_vec(), fb.shape().to_vec()));
    }
    let n = fa.numel() as f64;
    Ok(fa
        .data()
        .iter()
        .zip(fb.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Graph form of [`perceptual_loss`] over two feature nodes.
pub fn perceptual_loss_node(g: &mut Graph, f1: NodeId, f2: NodeId) -> NodeId {
    let d = g.sub(f1, f2);
    let s = g.square(d);
    g.mean_all(s)
}

/// Relativistic-average least-squares generator loss:
/// `E[(D(real) - E[D(fake)] + 1)^2] + E[(D(fake) - E[D(real)] - 1)^2]`.
pub fn ralsgan_generator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64, LossError> {
    ralsgan(d_real, d_fake, 1.0)
}

/// The critic's counterpart with the targets swapped:
/// `E[(D(real) - E[D(fake)] - 1)^2] + E[(D(fake) - E[D(real)] + 1)^2]`.
pub fn ralsgan_discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64, LossError> {
    ralsgan(d_real, d_fake, -1.0)
}

fn ralsgan(d_real: &[f64], d_fake: &[f64], real_target: f64) -> Result<f64, LossError> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mr, mf) = (mean(d_real), mean(d_fake));
    let t1 = mean(&d_real.iter().map(|r| (r - mf + real_target).powi(2)).collect::<Vec<_>>());
    let t2 = mean(&d_fake.iter().map(|f| (f - mr - real_target).powi(2)).collect::<Vec<_>>());
    Ok(t1 + t2)
}

/// Graph form of [`ralsgan_generator_loss`] over `[n]` score nodes.
pub fn ralsgan_generator_node(g: &mut Graph, d_real: NodeId, d_fake: NodeId) -> NodeId {
    ralsgan_node(g, d_real, d_fake, 1.0)
}

/// Graph form of [`ralsgan_discriminator_loss`].
pub fn ralsgan_discriminator_node(g: &mut Graph, d_real: NodeId, d_fake: NodeId) -> NodeId {
    ralsgan_node(g, d_real, d_fake, -1.0)
}

fn ralsgan_node(g: &mut Graph, d_real: NodeId, d_fake: NodeId, real_target: f64) -> NodeId {
    let (nr, nf) = (g.value(d_real).numel(), g.value(d_fake).numel());
    assert!(nr > 0 && nf > 0, "score batches must be non-empty");
    let mr = g.mean_all(d_real);
    let mf = g.mean_all(d_fake);
    let mf_b = g.broadcast(mf, nr);
    let rd = g.sub(d_real, mf_b);
    let rs = g.add_scalar(rd, real_target);
    let rq = g.square(rs);
    let t1 = g.mean_all(rq);
    let mr_f = g.broadcast(mr, nf);
    let fd = g.sub(d_fake, mr_f);
    let fs = g.add_scalar(fd, -real_target);
    let fq = g.square(fs);
    let t2 = g.mean_all(fq);
    g.add(t1, t2)
}

/// Combine the three terms per the weighted objective.
pub fn total_loss(
    identity: f64,
    content: f64,
    adversarial: f64,
    w: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    w.validate()?;
    for (name, v) in [("identity", identity), ("content", content), ("adversarial", adversarial)] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    let total =
        w.lambda_content * content + w.lambda_adv * adversarial + w.lambda_identity * identity;
    Ok(LossBreakdown { identity, content, adversarial, total })
}

/// Graph form of the weighted total.
pub fn total_loss_node(
    g: &mut Graph,
    identity: NodeId,
    content: NodeId,
    adversarial: NodeId,
    w: &LossWeights,
) -> NodeId {
    let c = g.scale(content, w.lambda_content);
    let a = g.scale(adversarial, w.lambda_adv);
    let i = g.scale(identity, w.lambda_identity);
    let ca = g.add(c, a);
    g.add(ca, i)
}

/// Deterministic image-to-feature map. Identity embedders return a `[D]`
/// vector; perceptual extractors return a `[C,H,W]` map. Implementations
/// with real pretrained weights plug in behind this same trait.
pub trait FeatureExtractor: Send + Sync {
    fn descriptor(&self) -> &str;

    /// Build the feature computation on a graph. Parameters are frozen:
    /// gradients flow through to the image, never into the extractor.
    fn forward(&self, g: &mut Graph, image: NodeId) -> NodeId;

    /// Evaluate features of one image.
    fn extract(&self, image: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let f = self.forward(&mut g, x);
        g.value(f).clone()
    }
}

/// Embed an image with an identity-role extractor.
pub fn embed_identity(
    extractor: &dyn FeatureExtractor,
    image: &Tensor,
) -> Result<IdentityEmbedding, LossError> {
    let f = extractor.extract(image);
    if f.shape().len() != 1 {
        return Err(LossError::NotAnEmbedding {
            descriptor: extractor.descriptor().to_string(),
            shape: f.shape().to_vec(),
        });
    }
    Ok(IdentityEmbedding::new(f.into_data()))
}

/// Features are the raw pixels. Useful as the trivially-interpretable
/// perceptual extractor in tests.
pub struct PixelExtractor;

impl FeatureExtractor for PixelExtractor {
    fn descriptor(&self) -> &str {
        "pixel"
    }

    fn forward(&self, _g: &mut Graph, image: NodeId) -> NodeId {
        image
    }
}

/// Fixed-weight convolutional stack; covers both extractor roles.
pub struct ConvStackExtractor {
    descriptor: String,
    layers: Vec<(Conv2d, bool)>,
    pool_to_vector: bool,
}

const IDENTITY_SEED: u64 = 0x1d5eed;
const PERCEPTUAL_SEED: u64 = 0x9e7c5eed;

impl ConvStackExtractor {
    /// Identity embedder: three stride-2 convolutions pooled per channel
    /// into a 128-dimensional vector. Weights come from a fixed seed.
    pub fn default_identity() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(IDENTITY_SEED);
        let layers = vec![
            (Conv2d::new("layer0", 3, 16, 3, 2, 1, &mut rng), true),
            (Conv2d::new("layer1", 16, 32, 3, 2, 1, &mut rng), true),
            (Conv2d::new("layer2", 32, 128, 3, 2, 1, &mut rng), false),
        ];
        Self { descriptor: "default-identity".into(), layers, pool_to_vector: true }
    }

    /// Perceptual extractor: a three-layer stack keeping a spatial map.
    pub fn default_perceptual() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PERCEPTUAL_SEED);
        let layers = vec![
            (Conv2d::new("layer0", 3, 16, 3, 1, 1, &mut rng), true),
            (Conv2d::new("layer1", 16, 32, 3, 2, 1, &mut rng), true),
            (Conv2d::new("layer2", 32, 64, 3, 2, 1, &mut rng), false),
        ];
        Self { descriptor: "default-perceptual".into(), layers, pool_to_vector: false }
    }

    /// Replace the stack's weights from a named-tensor archive. The archive
    /// must carry exactly the stack's `layerN.{weight,bias}` entries.
    pub fn with_weights_from(mut self, manifest: &Path, descriptor: &str) -> Result<Self, LossError> {
        let tensors = crate::archive::load(manifest)?;
        let mut model = ExtractorParams(&mut self.layers);
        crate::model::params::load(&mut model, &tensors)?;
        self.descriptor = descriptor.to_string();
        Ok(self)
    }
}

struct ExtractorParams<'a>(&'a mut Vec<(Conv2d, bool)>);

impl Params for ExtractorParams<'_> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (c, _) in self.0.iter() {
            c.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (c, _) in self.0.iter_mut() {
            c.visit_mut(f);
        }
    }
}

impl FeatureExtractor for ConvStackExtractor {
    fn descriptor(&self) -> &str {
        &self.descriptor
    }

    fn forward(&self, g: &mut Graph, image: NodeId) -> NodeId {
        let mut h = image;
        for (conv, act) in &self.layers {
            h = conv.forward_frozen(g, h);
            if *act {
                h = g.leaky_relu(h, 0.2);
            }
        }
        if self.pool_to_vector {
            h = g.channel_mean(h);
        }
        h
    }
}

/// Instantiate an extractor from its registry descriptor.
///
/// Known descriptors: `pixel`, `default-identity`, `default-perceptual`,
/// `identity-archive:<manifest.json>`, `perceptual-archive:<manifest.json>`.
pub fn create_extractor(descriptor: &str) -> Result<Box<dyn FeatureExtractor>, LossError> {
    if let Some(path) = descriptor.strip_prefix("identity-archive:") {
        let ex = ConvStackExtractor::default_identity()
            .with_weights_from(Path::new(path), descriptor)?;
        return Ok(Box::new(ex));
    }
    if let Some(path) = descriptor.strip_prefix("perceptual-archive:") {
        let ex = ConvStackExtractor::default_perceptual()
            .with_weights_from(Path::new(path), descriptor)?;
        return Ok(Box::new(ex));
    }
    match descriptor {
        "pixel" => Ok(Box::new(PixelExtractor)),
        "default-identity" => Ok(Box::new(ConvStackExtractor::default_identity())),
        "default-perceptual" => Ok(Box::new(ConvStackExtractor::default_perceptual())),
        other => Err(LossError::UnknownExtractor(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identity_loss_hand_values() {
        let e = |v: &[f64]| IdentityEmbedding::new(v.to_vec());
        assert_eq!(identity_loss(&e(&[1.0, 2.0]), &e(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(identity_loss(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 2.0);
        assert_eq!(identity_loss(&e(&[2.0, 2.0]), &e(&[0.0, 0.0])).unwrap(), 8.0);
    }

    #[test]
    fn identity_loss_is_symmetric_and_definite() {
        let a = IdentityEmbedding::new(vec![0.3, -1.0, 2.5]);
        let b = IdentityEmbedding::new(vec![0.1, 0.4, -0.9]);
        assert_eq!(identity_loss(&a, &b).unwrap(), identity_loss(&b, &a).unwrap());
        assert_eq!(identity_loss(&a, &a).unwrap(), 0.0);
        assert!(identity_loss(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn identity_loss_rejects_dimension_mismatch() {
        let a = IdentityEmbedding::new(vec![1.0]);
        let b = IdentityEmbedding::new(vec![1.0, 2.0]);
        assert!(matches!(identity_loss(&a, &b), Err(LossError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn perceptual_loss_with_pixel_extractor_is_mean_square() {
        let a = Tensor::full(vec![3, 4, 4], 0.25);
        let b = a.map(|v| v + 1.0);
        let l = perceptual_loss(&PixelExtractor, &b, &a).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        assert_eq!(perceptual_loss(&PixelExtractor, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ralsgan_hand_values() {
        // Constant critic -> 2; the optima land at 0 and the swapped pairs at 8.
        for c in [-3.0, 0.0, 1.7] {
            assert!((ralsgan_generator_loss(&[c], &[c]).unwrap() - 2.0).abs() < 1e-12);
            assert!((ralsgan_discriminator_loss(&[c], &[c]).unwrap() - 2.0).abs() < 1e-12);
        }
        assert!((ralsgan_generator_loss(&[1.0], &[0.0]).unwrap() - 8.0).abs() < 1e-12);
        assert!(ralsgan_generator_loss(&[0.0], &[1.0]).unwrap().abs() < 1e-12);
        assert!(ralsgan_discriminator_loss(&[1.0], &[0.0]).unwrap().abs() < 1e-12);
        assert!((ralsgan_discriminator_loss(&[0.0], &[1.0]).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn ralsgan_role_swap_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let m = rng.gen_range(1..6);
            let real: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let fake: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = ralsgan_generator_loss(&real, &fake).unwrap();
            let d_swapped = ralsgan_discriminator_loss(&fake, &real).unwrap();
            assert!((g - d_swapped).abs() < 1e-12);
        }
    }

    #[test]
    fn ralsgan_rejects_empty_batches() {
        assert!(matches!(ralsgan_generator_loss(&[], &[1.0]), Err(LossError::EmptyBatch)));
        assert!(matches!(ralsgan_discriminator_loss(&[1.0], &[]), Err(LossError::EmptyBatch)));
    }

    #[test]
    fn graph_losses_agree_with_plain_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let real: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fake: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let mut g = Graph::new();
        let r = g.input(Tensor::from_vec(real.clone()));
        let f = g.input(Tensor::from_vec(fake.clone()));
        let gen = ralsgan_generator_node(&mut g, r, f);
        let disc = ralsgan_discriminator_node(&mut g, r, f);
        assert!((g.value(gen).item() - ralsgan_generator_loss(&real, &fake).unwrap()).abs() < 1e-12);
        assert!(
            (g.value(disc).item() - ralsgan_discriminator_loss(&real, &fake).unwrap()).abs()
                < 1e-12
        );
    }

    #[test]
    fn total_loss_weighted_sum() {
        let w = LossWeights::default();
        let b = total_loss(30.0, 10.0, 20.0, &w).unwrap();
        assert!((b.total - 0.15).abs() < 1e-12);
        assert_eq!(b.identity, 30.0);
        assert_eq!(b.content, 10.0);
        assert_eq!(b.adversarial, 20.0);

        let zero = total_loss(0.0, 0.0, 0.0, &w).unwrap();
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn doubling_one_weight_moves_only_its_contribution() {
        let w = LossWeights::default();
        let doubled = LossWeights { lambda_adv: 2.0 * w.lambda_adv, ..w };
        let a = total_loss(3.0, 5.0, 7.0, &w).unwrap();
        let b = total_loss(3.0, 5.0, 7.0, &doubled).unwrap();
        assert!((b.total - a.total - w.lambda_adv * 7.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_part_names_the_term() {
        let w = LossWeights::default();
        let err = total_loss(1.0, f64::NAN, 2.0, &w).unwrap_err();
        assert!(err.to_string().contains("content"));
    }

    #[test]
    fn default_extractors_are_deterministic_and_fixed_dim() {
        let idext = ConvStackExtractor::default_identity();
        let img = Tensor::full(vec![3, 32, 32], 0.3);
        let e1 = embed_identity(&idext, &img).unwrap();
        let e2 = embed_identity(&idext, &img).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.dim(), 128);

        let pext = ConvStackExtractor::default_perceptual();
        let f = pext.extract(&img);
        assert_eq!(f.shape(), &[64, 8, 8]);
    }

    #[test]
    fn registry_resolves_known_descriptors() {
        for d in ["pixel", "default-identity", "default-perceptual"] {
            assert_eq!(create_extractor(d).unwrap().descriptor(), d);
        }
        assert!(matches!(create_extractor("vgg512"), Err(LossError::UnknownExtractor(_))));
    }

    #[test]
    fn archive_backed_extractor_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("weights.json");
        let base = ConvStackExtractor::default_identity();
        let mut layers_copy: Vec<(Conv2d, bool)> =
            base.layers.iter().map(|(c, a)| (c.clone(), *a)).collect();
        let params = crate::model::params::collect(&ExtractorParams(&mut layers_copy));
        crate::archive::save(&manifest, &params).unwrap();

        let loaded = create_extractor(&format!("identity-archive:{}", manifest.display())).unwrap();
        let img = Tensor::full(vec![3, 32, 32], -0.2);
        assert_eq!(loaded.extract(&img), base.extract(&img));
    }
}
