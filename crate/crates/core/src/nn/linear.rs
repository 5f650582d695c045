use super::gemm::{sgemm, View};
use super::{join_name, missing_cache, Ctx, Layer, Param, Slot, SlotRef, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer, `y = x·Wᵀ + b` with `W` of shape `[out, in]`.
pub struct Linear {
    weight: Param,
    bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: Param::new(Tensor::zeros(&[out_features, in_features])),
            bias: Param::new(Tensor::zeros(&[out_features])),
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn weight(&self) -> &Param {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Param {
        &mut self.weight
    }

    pub fn bias(&self) -> &Param {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Param {
        &mut self.bias
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let (fin, fout) = (self.in_features(), self.out_features());
        if x.rank() != 2 || x.shape()[1] != fin {
            return Err(Error::Contract(format!(
                "linear expects (N, {fin}), got {:?}",
                x.shape()
            )));
        }
        let n = x.shape()[0];
        let mut y = Tensor::zeros(&[n, fout]);
        for row in y.data_mut().chunks_mut(fout) {
            row.copy_from_slice(self.bias.value.data());
        }
        sgemm(
            n,
            fin,
            fout,
            View::row_major(x.data(), fin),
            View::transposed(self.weight.value.data(), fin),
            y.data_mut(),
            fout,
            1.0,
        );
        self.cache = ctx.is_train().then_some(x);
        Ok(y)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or_else(|| missing_cache("linear"))?;
        let (fin, fout) = (self.in_features(), self.out_features());
        let n = x.shape()[0];
        if grad.shape() != [n, fout] {
            return Err(Error::Contract(format!(
                "linear backward: gradient {:?}, expected [{n}, {fout}]",
                grad.shape()
            )));
        }
        if let Some(dw) = self.weight.grad_mut() {
            sgemm(fout, n, fin, View::transposed(grad.data(), fout), View::row_major(x.data(), fin), dw, fin, 1.0);
        }
        if let Some(db) = self.bias.grad_mut() {
            for row in grad.data().chunks(fout) {
                db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        let mut dx = Tensor::zeros(&[n, fin]);
        sgemm(
            n,
            fout,
            fin,
            View::row_major(grad.data(), fout),
            View::row_major(self.weight.value.data(), fin),
            dx.data_mut(),
            fin,
            0.0,
        );
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join_name(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join_name(prefix, "bias"), Slot::Param(&mut self.bias));
    }

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>)) {
        f(&join_name(prefix, "weight"), SlotRef::Param(&self.weight));
        f(&join_name(prefix, "bias"), SlotRef::Param(&self.bias));
    }
}
