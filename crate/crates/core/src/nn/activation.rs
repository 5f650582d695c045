use serde::{Deserialize, Serialize};

use super::{missing_cache, Ctx, Layer, Slot, SlotRef, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Relu6,
    Silu,
    Sigmoid,
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

enum Cache {
    /// Pass-through mask for the piecewise-linear rectifiers.
    Mask(Vec<bool>),
    Input(Tensor),
    Output(Tensor),
}

/// Element-wise nonlinearity.
pub struct Activation {
    kind: ActivationKind,
    cache: Option<Cache>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind, cache: None }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }
}

impl Layer for Activation {
    fn forward(&mut self, mut x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let train = ctx.is_train();
        self.cache = None;
        match self.kind {
            ActivationKind::Relu | ActivationKind::Relu6 => {
                let cap = if self.kind == ActivationKind::Relu6 { 6.0 } else { f32::INFINITY };
                let mut mask = if train { Vec::with_capacity(x.numel()) } else { Vec::new() };
                for v in x.data_mut() {
                    if train {
                        mask.push(*v > 0.0 && *v < cap);
                    }
                    *v = v.clamp(0.0, cap);
                }
                if train {
                    self.cache = Some(Cache::Mask(mask));
                }
            }
            ActivationKind::Silu => {
                if train {
                    self.cache = Some(Cache::Input(x.clone()));
                }
                for v in x.data_mut() {
                    *v *= sigmoid(*v);
                }
            }
            ActivationKind::Sigmoid => {
                for v in x.data_mut() {
                    *v = sigmoid(*v);
                }
                if train {
                    self.cache = Some(Cache::Output(x.clone()));
                }
            }
        }
        Ok(x)
    }

    fn backward(&mut self, mut grad: Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("activation"))?;
        let n = grad.numel();
        let g = grad.data_mut();
        match cache {
            Cache::Mask(mask) => {
                check_len(mask.len(), n)?;
                for (v, keep) in g.iter_mut().zip(mask) {
                    if !keep {
                        *v = 0.0;
                    }
                }
            }
            Cache::Input(x) => {
                check_len(x.numel(), n)?;
                for (v, x) in g.iter_mut().zip(x.data()) {
                    let s = sigmoid(*x);
                    *v *= s * (1.0 + x * (1.0 - s));
                }
            }
            Cache::Output(y) => {
                check_len(y.numel(), n)?;
                for (v, y) in g.iter_mut().zip(y.data()) {
                    *v *= y * (1.0 - y);
                }
            }
        }
        Ok(grad)
    }

    fn visit(&mut self, _: &str, _: &mut dyn FnMut(&str, Slot<'_>)) {}

    fn visit_ref<'a>(&'a self, _: &str, _: &mut dyn FnMut(&str, SlotRef<'a>)) {}
}

fn check_len(cached: usize, grad: usize) -> Result<()> {
    if cached != grad {
        return Err(Error::Contract(format!(
            "activation backward: gradient has {grad} values, forward had {cached}"
        )));
    }
    Ok(())
}
