//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a write-once tape: forward builders append nodes, and
//! [`Graph::backward`] walks the tape in reverse accumulating gradients.
//! Parameters are named leaves; registering the same name twice returns the
//! original node, which is how encoder weight sharing works — gradients from
//! every use accumulate into one leaf.

pub mod check;
pub mod kernels;

use std::collections::BTreeMap;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { stride: usize, pad: usize },
    LeakyRelu { slope: f64 },
    InstanceNorm { eps: f64 },
    UpsampleNearest { factor: usize },
    Add,
    Sub,
    AddScalar,
    Scale { c: f64 },
    Square,
    Clamp { lo: f64, hi: f64 },
    ConcatChannels,
    MeanAll,
    SumAll,
    ChannelMean,
    Broadcast,
    StackScalars,
}

struct Node {
    op: Op,
    parents: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

/// Gradients of one scalar root with respect to every grad-requiring node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for a named parameter; zeros if the parameter never
    /// influenced the root.
    pub fn for_param(&self, graph: &Graph, name: &str) -> Tensor {
        let id = graph.params[name];
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(graph.value(id).shape().to_vec()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, parents, value, requires_grad });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    /// Constant leaf; gradients do not flow into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, false)
    }

    /// Named differentiable leaf. A repeated name returns the existing node
    /// (shared weights accumulate gradients from all their uses).
    pub fn param(&mut self, name: &str, value: &Tensor) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            assert_eq!(
                self.nodes[id.0].value.shape(),
                value.shape(),
                "parameter {name} re-registered with a different shape"
            );
            return id;
        }
        let id = self.push(Op::Leaf, vec![], value.clone(), true);
        self.params.insert(name.to_string(), id);
        id
    }

    fn unary(&mut self, op: Op, x: NodeId, value: Tensor) -> NodeId {
        let rg = self.nodes[x.0].requires_grad;
        self.push(op, vec![x], value, rg)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let value =
            kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad);
        let rg = [x, w, b].iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Op::Conv2d { stride, pad }, vec![x, w, b], value, rg)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.unary(Op::LeakyRelu { slope }, x, value)
    }

    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let value =
            kernels::instance_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps);
        let rg = [x, gamma, beta].iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Op::InstanceNorm { eps }, vec![x, gamma, beta], value, rg)
    }

    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> NodeId {
        let value = kernels::upsample_nearest(self.value(x), factor);
        self.unary(Op::UpsampleNearest { factor }, x, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape mismatch");
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(Op::Add, vec![a, b], value, rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub shape mismatch");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(Op::Sub, vec![a, b], value, rg)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| v + c);
        self.unary(Op::AddScalar, x, value)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| c * v);
        self.unary(Op::Scale { c }, x, value)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v * v);
        self.unary(Op::Square, x, value)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        self.unary(Op::Clamp { lo, hi }, x, value)
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let (h, w) = (self.value(parts[0]).height(), self.value(parts[0]).width());
        let mut data = Vec::new();
        let mut c = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!((t.height(), t.width()), (h, w), "concat spatial mismatch");
            c += t.channels();
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Op::ConcatChannels, parts.to_vec(), Tensor::new(vec![c, h, w], data), rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64);
        self.unary(Op::MeanAll, x, value)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).data().iter().sum::<f64>());
        self.unary(Op::SumAll, x, value)
    }

    /// `[C,H,W] -> [C]`, the per-channel spatial mean.
    pub fn channel_mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let c = t.channels();
        let m = (t.height() * t.width()) as f64;
        let data = (0..c).map(|ch| t.plane(ch).iter().sum::<f64>() / m).collect();
        let value = Tensor::new(vec![c], data);
        self.unary(Op::ChannelMean, x, value)
    }

    /// `[1] -> [n]`.
    pub fn broadcast(&mut self, x: NodeId, n: usize) -> NodeId {
        let v = self.value(x).item();
        self.unary(Op::Broadcast, x, Tensor::full(vec![n], v))
    }

    /// Stack `[1]` scalars into an `[n]` vector.
    pub fn stack_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        let data = parts.iter().map(|&p| self.value(p).item()).collect();
        let rg = parts.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Op::StackScalars, parts.to_vec(), Tensor::from_vec(data), rg)
    }

    /// Backpropagate from a scalar root. Returns gradients for every node
    /// that `requires_grad` and influenced the root.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).numel(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let parent_grads = self.op_backward(node, &gout);
            for (p, g) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                let Some(g) = g else { continue };
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(gout);
            }
        }
        Gradients { grads }
    }

    fn op_backward(&self, node: &Node, gout: &Tensor) -> Vec<Option<Tensor>> {
        let pv = |k: usize| self.value(node.parents[k]);
        let need = |k: usize| self.nodes[node.parents[k].0].requires_grad;
        match node.op {
            Op::Leaf => vec![],
            Op::Conv2d { stride, pad } => {
                let (x, w) = (pv(0), pv(1));
                let gx = need(0).then(|| {
                    kernels::conv2d_backward_input(gout, w, x.shape(), stride, pad)
                });
                let gw = need(1).then(|| {
                    kernels::conv2d_backward_weight(gout, x, w.shape(), stride, pad)
                });
                let gb = need(2).then(|| kernels::conv2d_backward_bias(gout));
                vec![gx, gw, gb]
            }
            Op::LeakyRelu { slope } => {
                let x = pv(0);
                let data = gout
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &xv)| if xv > 0.0 { g } else { slope * g })
                    .collect();
                vec![Some(Tensor::new(x.shape().to_vec(), data))]
            }
            Op::InstanceNorm { eps } => {
                let (dx, dgamma, dbeta) = kernels::instance_norm_backward(gout, pv(0), pv(1), eps);
                vec![
                    need(0).then_some(dx),
                    need(1).then_some(dgamma),
                    need(2).then_some(dbeta),
                ]
            }
            Op::UpsampleNearest { factor } => {
                vec![Some(kernels::upsample_nearest_backward(gout, factor))]
            }
            Op::Add => vec![Some(gout.clone()), Some(gout.clone())],
            Op::Sub => vec![Some(gout.clone()), Some(gout.map(|v| -v))],
            Op::AddScalar => vec![Some(gout.clone())],
            Op::Scale { c } => vec![Some(gout.map(|v| c * v))],
            Op::Square => {
                let x = pv(0);
                let data = gout
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &xv)| 2.0 * xv * g)
                    .collect();
                vec![Some(Tensor::new(x.shape().to_vec(), data))]
            }
            Op::Clamp { lo, hi } => {
                let x = pv(0);
                let data = gout
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &xv)| if xv > lo && xv < hi { g } else { 0.0 })
                    .collect();
                vec![Some(Tensor::new(x.shape().to_vec(), data))]
            }
            Op::ConcatChannels => {
                let hw = gout.height() * gout.width();
                let mut offset = 0;
                node.parents
                    .iter()
                    .map(|&p| {
                        let t = self.value(p);
                        let len = t.channels() * hw;
                        let g = Tensor::new(
                            t.shape().to_vec(),
                            gout.data()[offset..offset + len].to_vec(),
                        );
                        offset += len;
                        Some(g)
                    })
                    .collect()
            }
            Op::MeanAll => {
                let x = pv(0);
                let g = gout.item() / x.numel() as f64;
                vec![Some(Tensor::full(x.shape().to_vec(), g))]
            }
            Op::SumAll => {
                let x = pv(0);
                vec![Some(Tensor::full(x.shape().to_vec(), gout.item()))]
            }
            Op::ChannelMean => {
                let x = pv(0);
                let (c, h, w) = (x.channels(), x.height(), x.width());
                let m = (h * w) as f64;
                let mut g = Tensor::zeros(vec![c, h, w]);
                for ch in 0..c {
                    let gv = gout.data()[ch] / m;
                    let hw = h * w;
                    g.data_mut()[ch * hw..(ch + 1) * hw].fill(gv);
                }
                vec![Some(g)]
            }
            Op::Broadcast => {
                vec![Some(Tensor::scalar(gout.data().iter().sum()))]
            }
            Op::StackScalars => gout
                .data()
                .iter()
                .map(|&g| Some(Tensor::scalar(g)))
                .collect(),
        }
    }
}
