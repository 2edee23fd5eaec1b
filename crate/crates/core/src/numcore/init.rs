//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Tensor;

/// Uniform on `[-limit, limit]` with `limit = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform(shape, limit, rng)
}

pub fn uniform(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}

pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}
