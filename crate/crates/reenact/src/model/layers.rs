//! Trainable layer primitives.

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::tensor::Tensor;

use super::params::Params;

/// 2-D convolution with square kernels.
#[derive(Clone, Debug)]
pub struct Conv2d {
    name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Uniform init with the fan-in bound `1/sqrt(in*k*k)`; zero bias.
    pub fn new<R: Rng>(
        name: impl Into<String>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        Self::with_bound(name, in_ch, out_ch, kernel, stride, pad, bound, rng)
    }

    /// Uniform init with an explicit bound.
    #[allow(clippy::too_many_arguments)]
    pub fn with_bound<R: Rng>(
        name: impl Into<String>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            name: name.into(),
            weight: Tensor::uniform(vec![out_ch, in_ch, kernel, kernel], bound, rng),
            bias: Tensor::zeros(vec![out_ch]),
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(&format!("{}.weight", self.name), &self.weight);
        let b = g.param(&format!("{}.bias", self.name), &self.bias);
        g.conv2d(x, w, b, self.stride, self.pad)
    }

    /// Forward without registering the weights as trainable: gradients flow
    /// through the convolution into `x` but never into the parameters.
    pub fn forward_frozen(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.input(self.weight.clone());
        let b = g.input(self.bias.clone());
        g.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn zero(&mut self) {
        self.weight.data_mut().fill(0.0);
        self.bias.data_mut().fill(0.0);
    }
}

impl Params for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.weight", self.name), &self.weight);
        f(&format!("{}.bias", self.name), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        f(&format!("{}.bias", self.name), &mut self.bias);
    }
}

/// Per-channel instance normalization with a learned affine.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    name: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl InstanceNorm {
    pub fn new(name: impl Into<String>, channels: usize, eps: f64) -> Self {
        Self {
            name: name.into(),
            gamma: Tensor::full(vec![channels], 1.0),
            beta: Tensor::zeros(vec![channels]),
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let gamma = g.param(&format!("{}.gamma", self.name), &self.gamma);
        let beta = g.param(&format!("{}.beta", self.name), &self.beta);
        g.instance_norm(x, gamma, beta, self.eps)
    }

    pub fn forward_frozen(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let gamma = g.input(self.gamma.clone());
        let beta = g.input(self.beta.clone());
        g.instance_norm(x, gamma, beta, self.eps)
    }
}

impl Params for InstanceNorm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.gamma", self.name), &self.gamma);
        f(&format!("{}.beta", self.name), &self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.gamma", self.name), &mut self.gamma);
        f(&format!("{}.beta", self.name), &mut self.beta);
    }
}
