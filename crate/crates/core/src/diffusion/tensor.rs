use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DiffusionError;

/// Dense real tensor with an explicit shape; images use `[h, w, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    /// Independent standard normal entries drawn from a seeded generator.
    pub fn standard_normal(shape: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, DiffusionError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(DiffusionError::ShapeMismatch { expected: shape.to_vec(), got: vec![data.len()] });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn check_shape(&self, expected: &[usize]) -> Result<(), DiffusionError> {
        if self.shape != expected {
            return Err(DiffusionError::ShapeMismatch { expected: expected.to_vec(), got: self.shape.clone() });
        }
        Ok(())
    }

    /// `a * self + b * other`, elementwise.
    pub fn lin_comb(&self, a: f64, other: &Tensor, b: f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "lin_comb shapes");
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn scaled(&self, a: f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| a * x).collect() }
    }

    pub fn add_scaled(&mut self, other: &Tensor, a: f64) {
        assert_eq!(self.shape, other.shape, "add_scaled shapes");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `‖self − reference‖ / ‖reference‖`.
    pub fn rel_l2(&self, reference: &Tensor) -> f64 {
        self.lin_comb(1.0, reference, -1.0).norm() / reference.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let a = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        assert_eq!(a.norm(), 5.0);
        assert_eq!(a.lin_comb(2.0, &b, -1.0).as_slice(), &[5.0, 8.0]);
        assert!(Tensor::from_vec(&[3], vec![0.0]).is_err());
        assert!((b.rel_l2(&a) - (4.0f64 + 16.0).sqrt() / 5.0).abs() < 1e-15);
    }
}
