//! Dense row-major `f64` tensors.
//!
//! Everything numerical in this crate — images, feature maps, weights,
//! embeddings — is a [`Tensor`]. Images and feature maps use `[C, H, W]`,
//! convolution weights `[O, I, K, K]`, vectors `[D]`, scalars `[1]`.

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    /// Uniform values in `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Single element of a `[1]` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on a tensor with {} elements", self.numel());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel count of a `[C, H, W]` tensor.
    pub fn channels(&self) -> usize {
        assert_eq!(self.shape.len(), 3);
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        assert_eq!(self.shape.len(), 3);
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        assert_eq!(self.shape.len(), 3);
        self.shape[2]
    }

    /// Contiguous `H*W` plane of channel `c` in a `[C, H, W]` tensor.
    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.shape[1] * self.shape[2];
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plane_slices_are_channel_major() {
        let t = Tensor::new(vec![2, 2, 2], vec![1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(t.plane(0), &[1., 2., 3., 4.]);
        assert_eq!(t.plane(1), &[5., 6., 7., 8.]);
    }

    #[test]
    fn uniform_respects_bound_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::uniform(vec![32], 0.1, &mut rng);
        assert!(a.data().iter().all(|v| v.abs() <= 0.1));
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let b = Tensor::uniform(vec![32], 0.1, &mut rng2);
        assert_eq!(a, b);
    }

    #[test]
    #[should_panic]
    fn mismatched_shape_panics() {
        Tensor::new(vec![2, 2], vec![1.0]);
    }
}
