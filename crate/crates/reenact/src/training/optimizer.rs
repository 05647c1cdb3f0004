//! Adam with bias correction, keyed by parameter name.

use std::collections::BTreeMap;

use crate::model::params::Params;
use crate::tensor::Tensor;

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, t: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter that has a gradient entry.
    pub fn step(&mut self, model: &mut dyn Params, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        model.visit_mut(&mut |name, value| {
            let Some(grad) = grads.get(name) else { return };
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| {
                    (Tensor::zeros(value.shape().to_vec()), Tensor::zeros(value.shape().to_vec()))
                });
            for ((p, g), (mi, vi)) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        });
    }

    /// Serialize moments plus the step counter as named tensors.
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert("adam.t".to_string(), Tensor::scalar(self.t as f64));
        for (name, (m, v)) in &self.moments {
            out.insert(format!("adam.m.{name}"), m.clone());
            out.insert(format!("adam.v.{name}"), v.clone());
        }
        out
    }

    /// Restore from [`Adam::to_tensors`] output.
    pub fn from_tensors(
        beta1: f64,
        beta2: f64,
        eps: f64,
        tensors: &BTreeMap<String, Tensor>,
    ) -> Self {
        let t = tensors.get("adam.t").map(|t| t.item() as u64).unwrap_or(0);
        let mut moments = BTreeMap::new();
        for (key, tensor) in tensors {
            if let Some(name) = key.strip_prefix("adam.m.") {
                let v = tensors
                    .get(&format!("adam.v.{name}"))
                    .expect("moment pair must be complete")
                    .clone();
                moments.insert(name.to_string(), (tensor.clone(), v));
            }
        }
        Self { beta1, beta2, eps, t, moments }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct OneParam {
        w: Tensor,
    }

    impl Params for OneParam {
        fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("w", &self.w);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("w", &mut self.w);
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        // With bias correction, the first Adam step is lr * g/(|g| + eps·…),
        // i.e. almost exactly lr in the gradient's direction.
        let mut model = OneParam { w: Tensor::from_vec(vec![1.0, -2.0]) };
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(vec![0.5, -3.0]));
        opt.step(&mut model, &grads, 0.01);
        assert!((model.w.data()[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((model.w.data()[1] - (-2.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut model = OneParam { w: Tensor::from_vec(vec![0.25, 0.75]) };
        let before = model.w.clone();
        let mut opt = Adam::new(0.5, 0.999, 1e-8);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(vec![10.0, -10.0]));
        opt.step(&mut model, &grads, 0.0);
        assert_eq!(model.w, before);
    }

    #[test]
    fn state_round_trips_bit_exactly() {
        let mut model = OneParam { w: Tensor::from_vec(vec![1.0, 2.0, 3.0]) };
        let mut opt = Adam::new(0.5, 0.999, 1e-8);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(vec![0.1, -0.2, 0.3]));
        opt.step(&mut model, &grads, 0.01);
        opt.step(&mut model, &grads, 0.01);

        let restored = Adam::from_tensors(0.5, 0.999, 1e-8, &opt.to_tensors());
        let mut a = model.w.clone();
        let mut b = model.w.clone();
        let mut opt_b = restored;
        let mut opt_a = opt;
        opt_a.step(&mut OneParamRef(&mut a), &grads, 0.01);
        opt_b.step(&mut OneParamRef(&mut b), &grads, 0.01);
        assert_eq!(a, b);
    }

    struct OneParamRef<'a>(&'a mut Tensor);

    impl Params for OneParamRef<'_> {
        fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("w", self.0);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("w", self.0);
        }
    }
}
