//! A small CPU convolutional-network engine with hand-written backward passes.
//!
//! Layers cache what they need during a [`Mode::Train`] forward and consume
//! that cache in [`Layer::backward`], accumulating parameter gradients.
//! [`Mode::Eval`] forwards cache nothing.

mod activation;
mod container;
mod conv;
mod dropout;
pub mod gemm;
pub mod init;
mod linear;
pub mod loss;
mod norm;
pub mod optim;
mod param;
mod pool;
mod se;
mod tensor;

pub use activation::{Activation, ActivationKind};
pub use container::{Residual, Sequential};
pub use conv::Conv2d;
pub use dropout::Dropout;
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use param::{join_name, Param, Slot};
pub use pool::{AdaptiveAvgPool2d, Flatten, MaxPool2d};
pub use se::SqueezeExcite;
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward context: the mode and the stream used by dropout-like layers.
pub struct Ctx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn new(mode: Mode, rng: ChaCha8Rng) -> Self {
        Ctx { mode, rng }
    }

    pub fn eval() -> Self {
        Ctx::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0))
    }

    pub fn train(seed: u64) -> Self {
        Ctx::new(Mode::Train, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// Read-only view used for auditing.
pub enum SlotRef<'a> {
    Param(&'a Param),
    Buffer(&'a Tensor),
}

pub trait Layer: Send + Sync {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor>;

    /// Consumes the cache of the last training forward. Returns the gradient
    /// with respect to that forward's input.
    fn backward(&mut self, grad: Tensor) -> Result<Tensor>;

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>));
}

pub(crate) fn missing_cache(layer: &str) -> Error {
    Error::Contract(format!("{layer}: backward called without a training forward"))
}

/// Sets the trainable flag on every parameter reachable from `layer`.
pub fn set_trainable(layer: &mut dyn Layer, trainable: bool) {
    layer.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            p.set_trainable(trainable);
        }
    });
}

pub fn zero_grad(layer: &mut dyn Layer) {
    layer.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            p.zero_grad();
        }
    });
}

/// (total, trainable) scalar parameter counts. Buffers are not counted.
pub fn count_params(layer: &dyn Layer) -> (usize, usize) {
    let mut total = 0;
    let mut trainable = 0;
    layer.visit_ref("", &mut |_, slot| {
        if let SlotRef::Param(p) = slot {
            total += p.numel();
            if p.trainable() {
                trainable += p.numel();
            }
        }
    });
    (total, trainable)
}

#[cfg(test)]
pub(crate) mod testing;

/// Named copy of every parameter and buffer, in visit order.
pub fn state_dict(layer: &dyn Layer) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    layer.visit_ref("", &mut |name, slot| {
        let t = match slot {
            SlotRef::Param(p) => &p.value,
            SlotRef::Buffer(b) => b,
        };
        out.push((name.to_string(), t.clone()));
    });
    out
}

/// Copies tensors into the matching slots of `layer`. Every slot must be
/// covered and shapes must agree; entries without a slot are returned.
pub fn load_state(
    layer: &mut dyn Layer,
    state: &std::collections::HashMap<String, Tensor>,
) -> Result<Vec<String>> {
    let mut used = std::collections::HashSet::new();
    let mut problem = None;
    layer.visit("", &mut |name, mut slot| {
        if problem.is_some() {
            return;
        }
        match state.get(name) {
            None => problem = Some(format!("missing tensor {name}")),
            Some(t) if t.shape() != slot.tensor().shape() => {
                problem = Some(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.tensor().shape()
                ))
            }
            Some(t) => {
                slot.tensor_mut().data_mut().copy_from_slice(t.data());
                used.insert(name.to_string());
            }
        }
    });
    if let Some(p) = problem {
        return Err(Error::Checkpoint(p));
    }
    let mut extra: Vec<String> = state.keys().filter(|k| !used.contains(*k)).cloned().collect();
    extra.sort();
    Ok(extra)
}
