//! First-order optimizers over the trainable parameters of a layer tree.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Layer, Slot};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adaptive moments, betas (0.9, 0.999), eps 1e-8, no weight decay.
    Adam,
    /// Plain SGD with momentum 0.9.
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (valid: adam, sgd)"))),
        }
    }
}

pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    first: HashMap<String, Vec<f32>>,
    second: HashMap<String, Vec<f32>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
const MOMENTUM: f32 = 0.9;

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update with learning rate `lr` to every trainable
    /// parameter, using the gradients accumulated since the last zeroing.
    pub fn step(&mut self, model: &mut dyn Layer, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let kind = self.kind;
        let (first, second) = (&mut self.first, &mut self.second);
        model.visit("", &mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            if !p.trainable() {
                return;
            }
            let n = p.numel();
            let (value, grad) = p.value_and_grad();
            match kind {
                OptimizerKind::Adam => {
                    let m = first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
                    let v = second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
                    let bc1 = 1.0 - BETA1.powi(t);
                    let bc2 = 1.0 - BETA2.powi(t);
                    let step_size = (lr / bc1) as f32;
                    let bc2_sqrt = bc2.sqrt() as f32;
                    let (b1, b2) = (BETA1 as f32, BETA2 as f32);
                    for i in 0..n {
                        let g = grad[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * g;
                        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                        let denom = v[i].sqrt() / bc2_sqrt + EPS as f32;
                        value[i] -= step_size * m[i] / denom;
                    }
                }
                OptimizerKind::Sgd => {
                    let buf = first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
                    let lr = lr as f32;
                    for i in 0..n {
                        buf[i] = if t == 1 { grad[i] } else { MOMENTUM * buf[i] + grad[i] };
                        value[i] -= lr * buf[i];
                    }
                }
            }
        });
    }
}
