//! Weight initializers matching the reference implementations of the zoo
//! architectures.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Tensor;

pub fn normal(shape: &[usize], std: f32, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0f32, std).expect("std must be finite and non-negative");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("sized by shape")
}

pub fn uniform(shape: &[usize], bound: f32, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    if bound == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("sized by shape")
}

/// He-normal with fan computed over output channels (ReLU gain).
pub fn kaiming_normal_fan_out(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let receptive: usize = shape[2..].iter().product();
    let fan_out = shape[0] * receptive;
    normal(shape, (2.0 / fan_out as f32).sqrt(), rng)
}

/// The default for freshly constructed linear/conv layers:
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn default_bound(shape: &[usize]) -> f32 {
    let fan_in: usize = shape[1..].iter().product();
    1.0 / (fan_in.max(1) as f32).sqrt()
}
