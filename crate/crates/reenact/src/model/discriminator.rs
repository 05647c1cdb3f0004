//! The conditional critic: five stride-2 convolutions over an image stacked
//! with its boundary map, normalized per instance on the hidden layers, and
//! globally averaged into one score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::geometry::BoundaryMap;
use crate::tensor::Tensor;

use super::layers::{Conv2d, InstanceNorm};
use super::params::Params;
use super::ModelError;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Image channels plus boundary-map channels.
    pub input_channels: usize,
    pub widths: [usize; 5],
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_channels: 6,
            widths: [32, 64, 128, 256, 1],
            leaky_slope: 0.2,
            norm_eps: 1e-5,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_channels < 4 {
            return Err(ModelError::InvalidConfig(
                "discriminator input must carry an RGB image plus at least one condition channel"
                    .into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(ModelError::InvalidConfig("discriminator widths must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(ModelError::InvalidConfig(
                "leaky slope must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

/// An image together with the boundary map it is conditioned on. The real
/// sample pairs the source image with the source's map; the fake sample
/// pairs the generated image with that same map.
#[derive(Clone, Debug)]
pub struct ConditionedSample {
    pub image: Tensor,
    pub condition: BoundaryMap,
}

impl ConditionedSample {
    /// Stack image and condition channels into the critic's input tensor.
    pub fn to_input(&self) -> Result<Tensor, ModelError> {
        let (h, w) = (self.image.height(), self.image.width());
        if self.image.channels() != 3 || h != w {
            return Err(ModelError::ShapeMismatch {
                what: "conditioned image".into(),
                expected: vec![3, h, h],
                actual: self.image.shape().to_vec(),
            });
        }
        if self.condition.size() != h {
            return Err(ModelError::ShapeMismatch {
                what: "boundary map".into(),
                expected: vec![self.condition.channels(), h, w],
                actual: vec![self.condition.channels(), self.condition.size(), self.condition.size()],
            });
        }
        let cond = self.condition.to_tensor();
        let mut data = Vec::with_capacity((3 + cond.channels()) * h * w);
        data.extend_from_slice(self.image.data());
        data.extend_from_slice(cond.data());
        Ok(Tensor::new(vec![3 + cond.channels(), h, w], data))
    }
}

pub struct Discriminator {
    cfg: DiscriminatorConfig,
    convs: Vec<Conv2d>,
    norms: Vec<InstanceNorm>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(5);
        let mut in_ch = cfg.input_channels;
        for (i, &w) in cfg.widths.iter().enumerate() {
            convs.push(Conv2d::new(format!("disc.conv{i}"), in_ch, w, 3, 2, 1, &mut rng));
            in_ch = w;
        }
        // The first layer keeps the raw input statistics (normalizing them
        // would flatten the sparse boundary channels); the output layer is
        // plain. Hidden layers 2..4 are normalized.
        let norms = (1..4)
            .map(|i| InstanceNorm::new(format!("disc.norm{i}"), cfg.widths[i], cfg.norm_eps))
            .collect();
        Ok(Self { cfg, convs, norms })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    /// Graph-mode forward from a stacked input to the scalar score node.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        self.forward_impl(g, x, true)
    }

    /// Forward with frozen parameters: scores stay differentiable with
    /// respect to the input image, but no gradient reaches the critic's own
    /// weights. The generator update uses this.
    pub fn forward_frozen(&self, g: &mut Graph, x: NodeId) -> NodeId {
        self.forward_impl(g, x, false)
    }

    fn forward_impl(&self, g: &mut Graph, x: NodeId, trainable: bool) -> NodeId {
        let conv = |g: &mut Graph, c: &Conv2d, h: NodeId| {
            if trainable {
                c.forward(g, h)
            } else {
                c.forward_frozen(g, h)
            }
        };
        let mut h = conv(g, &self.convs[0], x);
        h = g.leaky_relu(h, self.cfg.leaky_slope);
        for i in 1..4 {
            h = conv(g, &self.convs[i], h);
            h = if trainable {
                self.norms[i - 1].forward(g, h)
            } else {
                self.norms[i - 1].forward_frozen(g, h)
            };
            h = g.leaky_relu(h, self.cfg.leaky_slope);
        }
        h = conv(g, &self.convs[4], h);
        g.mean_all(h)
    }

    /// Score a conditioned sample with frozen parameters.
    pub fn score(&self, sample: &ConditionedSample) -> Result<f64, ModelError> {
        let input = sample.to_input()?;
        self.score_input(&input)
    }

    pub fn score_input(&self, input: &Tensor) -> Result<f64, ModelError> {
        if input.shape().len() != 3 || input.channels() != self.cfg.input_channels {
            return Err(ModelError::ShapeMismatch {
                what: "discriminator input".into(),
                expected: vec![self.cfg.input_channels, input.height(), input.width()],
                actual: input.shape().to_vec(),
            });
        }
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let s = self.forward(&mut g, x);
        Ok(g.value(s).item())
    }
}

impl Params for Discriminator {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for c in &self.convs {
            c.visit(f);
        }
        for n in &self.norms {
            n.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for c in &mut self.convs {
            c.visit_mut(f);
        }
        for n in &mut self.norms {
            n.visit_mut(f);
        }
    }
}
