use rand::Rng;

use super::{missing_cache, Ctx, Layer, Slot, SlotRef, Tensor};
use crate::error::{Error, Result};

/// Inverted dropout: in training, zeroes each value with probability `p`
/// and scales survivors by `1 / (1 - p)`. Identity in eval mode.
pub struct Dropout {
    p: f32,
    cache: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(p: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability must lie in [0, 1), got {p}")));
        }
        Ok(Dropout { p, cache: None })
    }

    pub fn p(&self) -> f32 {
        self.p
    }
}

impl Layer for Dropout {
    fn forward(&mut self, mut x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        if !ctx.is_train() {
            self.cache = None;
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - self.p);
        let p = self.p as f64;
        let mask: Vec<f32> = (0..x.numel())
            .map(|_| if ctx.rng.random_bool(p) { 0.0 } else { scale })
            .collect();
        x.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.cache = Some(mask);
        Ok(x)
    }

    fn backward(&mut self, mut grad: Tensor) -> Result<Tensor> {
        let mask = self.cache.take().ok_or_else(|| missing_cache("dropout"))?;
        if mask.len() != grad.numel() {
            return Err(Error::Contract("dropout backward: shape mismatch".into()));
        }
        grad.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        Ok(grad)
    }

    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, Slot<'_>)) {}

    fn visit_ref<'a>(&'a self, _: &str, _: &mut dyn FnMut(&str, SlotRef<'a>)) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::check_layer_gradients;

    #[test]
    fn eval_is_identity_and_train_drops_about_p() {
        let mut d = Dropout::new(0.2).unwrap();
        let x = Tensor::full(&[100, 100], 1.0);
        assert_eq!(d.forward(x.clone(), &mut Ctx::eval()).unwrap(), x);
        let y = d.forward(x, &mut Ctx::train(3)).unwrap();
        let dropped = y.data().iter().filter(|v| **v == 0.0).count();
        assert!((1800..2200).contains(&dropped), "{dropped}");
        assert!(y.data().iter().all(|v| *v == 0.0 || (*v - 1.25).abs() < 1e-6));
    }

    #[test]
    fn rejects_invalid_probability() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_layer_gradients(&mut Dropout::new(0.3).unwrap(), &[3, 7], 8);
    }
}
