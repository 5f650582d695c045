use super::{missing_cache, Ctx, Layer, Slot, SlotRef, Tensor};
use crate::error::{Error, Result};

fn expect_rank4(x: &Tensor, what: &str) -> Result<()> {
    if x.rank() != 4 {
        return Err(Error::Contract(format!("{what} expects NCHW input, got {:?}", x.shape())));
    }
    Ok(())
}

/// Max pooling with implicit `-inf` padding.
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    /// Input shape and, per output element, the flat input index of its max.
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        expect_rank4(&x, "max pool")?;
        let (n, c, h, w) = x.dims4();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::Contract(format!("input {h}x{w} too small for max pool {k}")));
        }
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let mut argmax = Vec::with_capacity(out.numel());
        for plane in 0..n * c {
            let base = plane * h * w;
            let src = &x.data()[base..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > best || best_idx == usize::MAX {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[(plane * ho + oy) * wo + ox] = best;
                    argmax.push(base + best_idx);
                }
            }
        }
        self.cache = ctx.is_train().then(|| (x.shape().to_vec(), argmax));
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let (shape, argmax) = self.cache.take().ok_or_else(|| missing_cache("max_pool"))?;
        if grad.numel() != argmax.len() {
            return Err(Error::Contract("max pool backward: shape mismatch".into()));
        }
        let mut dx = Tensor::zeros(&shape);
        for (g, idx) in grad.data().iter().zip(argmax) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }

    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, Slot<'_>)) {}

    fn visit_ref<'a>(&'a self, _: &str, _: &mut dyn FnMut(&str, SlotRef<'a>)) {}
}

/// Averages each plane into an `out_h`×`out_w` grid of (possibly
/// overlapping) bins, `[floor(i*H/out), ceil((i+1)*H/out))`.
pub struct AdaptiveAvgPool2d {
    out_h: usize,
    out_w: usize,
    cache: Option<Vec<usize>>,
}

fn bin(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

impl AdaptiveAvgPool2d {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        AdaptiveAvgPool2d {
            out_h,
            out_w,
            cache: None,
        }
    }

    pub fn global() -> Self {
        Self::new(1, 1)
    }
}

impl Layer for AdaptiveAvgPool2d {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        expect_rank4(&x, "adaptive avg pool")?;
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (self.out_h, self.out_w);
        if h == oh && w == ow {
            self.cache = ctx.is_train().then(|| x.shape().to_vec());
            return Ok(x);
        }
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..][..h * w];
            for oy in 0..oh {
                let (y0, y1) = bin(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1) = bin(ox, w, ow);
                    let mut s = 0.0f32;
                    for y in y0..y1 {
                        s += src[y * w + x0..y * w + x1].iter().sum::<f32>();
                    }
                    out.data_mut()[(plane * oh + oy) * ow + ox] = s / ((y1 - y0) * (x1 - x0)) as f32;
                }
            }
        }
        self.cache = ctx.is_train().then(|| x.shape().to_vec());
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let shape = self.cache.take().ok_or_else(|| missing_cache("adaptive_avg_pool"))?;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (oh, ow) = (self.out_h, self.out_w);
        if grad.shape() != [n, c, oh, ow] {
            return Err(Error::Contract("adaptive avg pool backward: shape mismatch".into()));
        }
        if h == oh && w == ow {
            return Ok(grad);
        }
        let mut dx = Tensor::zeros(&shape);
        for plane in 0..n * c {
            let dst = &mut dx.data_mut()[plane * h * w..][..h * w];
            for oy in 0..oh {
                let (y0, y1) = bin(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1) = bin(ox, w, ow);
                    let g = grad.data()[(plane * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f32;
                    for y in y0..y1 {
                        dst[y * w + x0..y * w + x1].iter_mut().for_each(|v| *v += g);
                    }
                }
            }
        }
        Ok(dx)
    }

    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, Slot<'_>)) {}

    fn visit_ref<'a>(&'a self, _: &str, _: &mut dyn FnMut(&str, SlotRef<'a>)) {}
}

/// (N, C, H, W) -> (N, C·H·W).
#[derive(Default)]
pub struct Flatten {
    cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let n = *x.shape().first().ok_or_else(|| Error::Contract("flatten of a scalar".into()))?;
        let rest = if n == 0 { x.shape()[1..].iter().product() } else { x.numel() / n };
        self.cache = ctx.is_train().then(|| x.shape().to_vec());
        x.reshape(&[n, rest])
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let shape = self.cache.take().ok_or_else(|| missing_cache("flatten"))?;
        grad.reshape(&shape)
    }

    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, Slot<'_>)) {}

    fn visit_ref<'a>(&'a self, _: &str, _: &mut dyn FnMut(&str, SlotRef<'a>)) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::check_layer_gradients;

    #[test]
    fn max_pool_values_and_padding() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let y = MaxPool2d::new(3, 2, 1).forward(x.clone(), &mut Ctx::eval()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0, 6.0, 8.0, 9.0]);
        let y = MaxPool2d::new(2, 2, 0).forward(x, &mut Ctx::eval()).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn adaptive_pool_bins() {
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = AdaptiveAvgPool2d::global().forward(x.clone(), &mut Ctx::eval()).unwrap();
        assert_eq!(g.data(), &[3.5]);
        let y = AdaptiveAvgPool2d::new(1, 2).forward(x.clone(), &mut Ctx::eval()).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
        let up = AdaptiveAvgPool2d::new(4, 3).forward(x, &mut Ctx::eval()).unwrap();
        assert_eq!(up.shape(), &[1, 1, 4, 3]);
        assert_eq!(&up.data()[..3], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_layer_gradients(&mut MaxPool2d::new(3, 2, 1), &[2, 2, 5, 6], 1);
        check_layer_gradients(&mut MaxPool2d::new(2, 2, 0), &[1, 3, 4, 4], 2);
        check_layer_gradients(&mut AdaptiveAvgPool2d::global(), &[2, 3, 4, 5], 3);
        check_layer_gradients(&mut AdaptiveAvgPool2d::new(3, 2), &[1, 2, 5, 7], 4);
        check_layer_gradients(&mut AdaptiveAvgPool2d::new(7, 7), &[1, 2, 3, 3], 5);
        check_layer_gradients(&mut Flatten::new(), &[2, 3, 2, 2], 6);
    }
}
