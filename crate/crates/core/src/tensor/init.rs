use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// Glorot/Xavier uniform initialization for a `[fan_in, fan_out]` matrix.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| rng.random_range(-limit..limit))
}

/// Entries drawn from N(0, std²).
pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std must be finite and positive");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}
