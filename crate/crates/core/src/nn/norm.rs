use super::{join_name, missing_cache, Ctx, Layer, Param, Slot, SlotRef, Tensor};
use crate::error::{Error, Result};

struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f32>,
}

/// Batch normalization over (N, H, W) per channel.
///
/// Training forwards normalize with batch statistics and update the running
/// estimates (momentum 0.1, unbiased variance); eval forwards use the running
/// estimates.
pub struct BatchNorm2d {
    weight: Param,
    bias: Param,
    running_mean: Tensor,
    running_var: Tensor,
    eps: f32,
    momentum: f32,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            weight: Param::new(Tensor::full(&[channels], 1.0)),
            bias: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.numel()
    }

    pub fn running_mean(&self) -> &Tensor {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor {
        &self.running_var
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 4 || x.shape()[1] != self.channels() {
            return Err(Error::Contract(format!(
                "batch norm expects (N, {}, H, W), got {:?}",
                self.channels(),
                x.shape()
            )));
        }
        Ok(())
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, mut x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        self.check(&x)?;
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let count = n * hw;
        let gamma = self.weight.value.data().to_vec();
        let beta = self.bias.value.data().to_vec();
        self.cache = None;

        if !ctx.is_train() {
            for ch in 0..c {
                let inv = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
                let scale = gamma[ch] * inv;
                let shift = beta[ch] - self.running_mean.data()[ch] * scale;
                for b in 0..n {
                    for v in &mut x.data_mut()[(b * c + ch) * hw..][..hw] {
                        *v = *v * scale + shift;
                    }
                }
            }
            return Ok(x);
        }

        if count < 2 {
            return Err(Error::Contract(
                "batch norm needs more than one value per channel in training".into(),
            ));
        }
        let mut x_hat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0f32; c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            for b in 0..n {
                sum += x.data()[(b * c + ch) * hw..][..hw].iter().map(|v| *v as f64).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for b in 0..n {
                sq += x.data()[(b * c + ch) * hw..][..hw]
                    .iter()
                    .map(|v| {
                        let d = *v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / count as f64;
            let inv = 1.0 / (var + self.eps as f64).sqrt();
            inv_std[ch] = inv as f32;
            let (mean32, inv32) = (mean as f32, inv as f32);
            for b in 0..n {
                let off = (b * c + ch) * hw;
                let src = &mut x.data_mut()[off..][..hw];
                let dst = &mut x_hat.data_mut()[off..][..hw];
                for (s, d) in src.iter_mut().zip(dst.iter_mut()) {
                    *d = (*s - mean32) * inv32;
                    *s = gamma[ch] * *d + beta[ch];
                }
            }
            let m = self.momentum;
            let unbiased = (sq / (count - 1) as f64) as f32;
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - m) * *rm + m * mean32;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - m) * *rv + m * unbiased;
        }
        self.cache = Some(BnCache { x_hat, inv_std });
        Ok(x)
    }

    fn backward(&mut self, mut grad: Tensor) -> Result<Tensor> {
        let BnCache { x_hat, inv_std } = self.cache.take().ok_or_else(|| missing_cache("batch_norm"))?;
        if grad.shape() != x_hat.shape() {
            return Err(Error::Contract("batch norm backward: shape mismatch".into()));
        }
        let (n, c, h, w) = grad.dims4();
        let hw = h * w;
        let count = (n * hw) as f32;
        let gamma = self.weight.value.data().to_vec();
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for (dy, xh) in grad.data()[off..][..hw].iter().zip(&x_hat.data()[off..][..hw]) {
                    sum_dy += *dy as f64;
                    sum_dy_xhat += (*dy * *xh) as f64;
                }
            }
            dgamma[ch] = sum_dy_xhat as f32;
            dbeta[ch] = sum_dy as f32;
            let k = gamma[ch] * inv_std[ch] / count;
            let (mean_dy, mean_dy_xhat) = (sum_dy as f32, sum_dy_xhat as f32);
            for b in 0..n {
                let off = (b * c + ch) * hw;
                let xs = &x_hat.data()[off..][..hw];
                for (dy, xh) in grad.data_mut()[off..][..hw].iter_mut().zip(xs) {
                    *dy = k * (count * *dy - mean_dy - xh * mean_dy_xhat);
                }
            }
        }
        if let Some(g) = self.weight.grad_mut() {
            g.iter_mut().zip(&dgamma).for_each(|(a, b)| *a += b);
        }
        if let Some(g) = self.bias.grad_mut() {
            g.iter_mut().zip(&dbeta).for_each(|(a, b)| *a += b);
        }
        Ok(grad)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join_name(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join_name(prefix, "bias"), Slot::Param(&mut self.bias));
        f(&join_name(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(&join_name(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
    }

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>)) {
        f(&join_name(prefix, "weight"), SlotRef::Param(&self.weight));
        f(&join_name(prefix, "bias"), SlotRef::Param(&self.bias));
        f(&join_name(prefix, "running_mean"), SlotRef::Buffer(&self.running_mean));
        f(&join_name(prefix, "running_var"), SlotRef::Buffer(&self.running_var));
    }
}
