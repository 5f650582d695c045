use super::Tensor;

/// A learnable array with its gradient accumulator.
///
/// Frozen parameters carry an empty gradient buffer and are never touched by
/// backward passes or optimizers.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    grad: Vec<f32>,
    trainable: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = vec![0.0; value.numel()];
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
        if trainable {
            self.grad.resize(self.value.numel(), 0.0);
        } else {
            self.grad = Vec::new();
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn grad(&self) -> &[f32] {
        &self.grad
    }

    /// Gradient buffer, or `None` when frozen.
    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        if self.trainable {
            Some(&mut self.grad)
        } else {
            None
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Value and gradient, split-borrowed for optimizer updates.
    pub fn value_and_grad(&mut self) -> (&mut [f32], &[f32]) {
        (self.value.data_mut(), &self.grad)
    }
}

/// Mutable view of one named piece of layer state.
pub enum Slot<'a> {
    Param(&'a mut Param),
    /// Non-learnable state such as batch-norm running statistics.
    Buffer(&'a mut Tensor),
}

impl Slot<'_> {
    pub fn tensor(&self) -> &Tensor {
        match self {
            Slot::Param(p) => &p.value,
            Slot::Buffer(t) => t,
        }
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        match self {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(t) => t,
        }
    }
}

pub fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
