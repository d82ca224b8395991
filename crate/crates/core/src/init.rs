//! Weight initializers.

use rand::Rng;

use crate::tensor::{Real, Tensor};

/// Uniform in `±sqrt(6 / fan_in)`, for layers followed by a ReLU.
pub fn he_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, for sigmoid or linear outputs.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches generated length")
}
