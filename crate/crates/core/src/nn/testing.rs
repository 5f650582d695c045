//! Finite-difference gradient checking shared by the layer tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Ctx, Layer, Slot, Tensor};

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0f32, 1.0).unwrap();
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(&mut rng)).collect()).unwrap()
}

const CTX_SEED: u64 = 1234;

fn weighted_sum(layer: &mut dyn Layer, x: &Tensor, r: &Tensor) -> f64 {
    let y = layer.forward(x.clone(), &mut Ctx::train(CTX_SEED)).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
}

fn assert_close(what: &str, numeric: f64, analytic: f64) {
    let tol = 2e-3 + 2e-2 * numeric.abs().max(analytic.abs());
    assert!(
        (numeric - analytic).abs() <= tol,
        "{what}: numeric {numeric} vs analytic {analytic}"
    );
}

fn sample_indices(n: usize, limit: usize) -> Vec<usize> {
    if n <= limit {
        (0..n).collect()
    } else {
        (0..limit).map(|i| i * n / limit).collect()
    }
}

/// Checks input and parameter gradients of `L = sum(forward(x) * r)` for a
/// random `x` and `r` against central differences.
pub fn check_layer_gradients(layer: &mut dyn Layer, input_shape: &[usize], seed: u64) {
    let x = random_tensor(input_shape, seed);
    let y = layer.forward(x.clone(), &mut Ctx::train(CTX_SEED)).unwrap();
    let r = random_tensor(y.shape(), seed + 1);
    super::zero_grad(layer);
    let dx = layer.backward(r.clone()).unwrap();
    assert_eq!(dx.shape(), x.shape());

    let mut grads: Vec<(String, Vec<f32>)> = Vec::new();
    layer.visit("", &mut |name, slot| {
        if let Slot::Param(p) = slot {
            if p.trainable() {
                grads.push((name.to_string(), p.grad().to_vec()));
            }
        }
    });

    let eps = 1e-3f32;
    for i in sample_indices(x.numel(), 40) {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let lp = weighted_sum(layer, &xp, &r);
        xp.data_mut()[i] -= 2.0 * eps;
        let lm = weighted_sum(layer, &xp, &r);
        assert_close(&format!("d/dx[{i}]"), (lp - lm) / (2.0 * eps as f64), dx.data()[i] as f64);
    }

    for (name, grad) in grads {
        for i in sample_indices(grad.len(), 30) {
            let shift = |delta: f32, layer: &mut dyn Layer| {
                layer.visit("", &mut |n, slot| {
                    if let Slot::Param(p) = slot {
                        if n == name {
                            p.value.data_mut()[i] += delta;
                        }
                    }
                });
            };
            shift(eps, layer);
            let lp = weighted_sum(layer, &x, &r);
            shift(-2.0 * eps, layer);
            let lm = weighted_sum(layer, &x, &r);
            shift(eps, layer);
            assert_close(&format!("d/d{name}[{i}]"), (lp - lm) / (2.0 * eps as f64), grad[i] as f64);
        }
    }
}
