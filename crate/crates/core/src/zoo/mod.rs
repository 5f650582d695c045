//! The five model configurations: four frozen-backbone transfer baselines
//! and MobileNet-BT, a fully unfrozen MobileNetV2 with a two-layer head.

mod arch;
pub mod checkpoint;
pub mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use arch::Backbone;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use weights::{load_pretrained_backbone, WeightsStore};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::nn::{
    count_params, set_trainable, Activation, ActivationKind, Ctx, Dropout, Layer, Mode, Sequential, Slot, SlotRef,
    Tensor,
};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneId {
    MobilenetV2,
    Resnet18,
    EfficientnetB0,
    Vgg16,
}

impl BackboneId {
    pub const ALL: [BackboneId; 4] = [
        BackboneId::MobilenetV2,
        BackboneId::Resnet18,
        BackboneId::EfficientnetB0,
        BackboneId::Vgg16,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackboneId::MobilenetV2 => "mobilenet_v2",
            BackboneId::Resnet18 => "resnet18",
            BackboneId::EfficientnetB0 => "efficientnet_b0",
            BackboneId::Vgg16 => "vgg16",
        }
    }

    /// Published total parameter count, including the 1000-class classifier.
    pub fn reference_params(self) -> f64 {
        match self {
            BackboneId::MobilenetV2 => 3.5e6,
            BackboneId::Resnet18 => 11.7e6,
            BackboneId::EfficientnetB0 => 5.3e6,
            BackboneId::Vgg16 => 138e6,
        }
    }

    /// Width of the vector fed to the final classification layer.
    pub fn feature_width(self) -> usize {
        match self {
            BackboneId::MobilenetV2 | BackboneId::EfficientnetB0 => 1280,
            BackboneId::Resnet18 => 512,
            BackboneId::Vgg16 => 4096,
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for BackboneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackboneId::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown backbone {s:?} (valid: {})",
                BackboneId::ALL.map(|b| b.name()).join(", ")
            ))
        })
    }
}

/// One of the five benchmarked configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Baseline(BackboneId),
    MobilenetBt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Baseline(BackboneId::MobilenetV2),
        ModelKind::Baseline(BackboneId::Resnet18),
        ModelKind::Baseline(BackboneId::EfficientnetB0),
        ModelKind::Baseline(BackboneId::Vgg16),
        ModelKind::MobilenetBt,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ModelKind::Baseline(b) => b.name(),
            ModelKind::MobilenetBt => "mobilenet_bt",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Baseline(BackboneId::MobilenetV2) => "MobileNetV2",
            ModelKind::Baseline(BackboneId::Resnet18) => "ResNet-18",
            ModelKind::Baseline(BackboneId::EfficientnetB0) => "EfficientNet-B0",
            ModelKind::Baseline(BackboneId::Vgg16) => "VGG16",
            ModelKind::MobilenetBt => "MobileNet-BT",
        }
    }

    pub fn backbone(self) -> BackboneId {
        match self {
            ModelKind::Baseline(b) => b,
            ModelKind::MobilenetBt => BackboneId::MobilenetV2,
        }
    }

    pub fn valid_ids() -> String {
        ModelKind::ALL.map(|k| k.id()).join(", ")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown model id {s:?} (valid: {})", ModelKind::valid_ids())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    FreezeAllButFinal,
    UnfreezeAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayer {
    Dropout(f32),
    Linear(usize),
    Activation(ActivationKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub layers: Vec<HeadLayer>,
}

impl HeadSpec {
    pub fn single_linear(num_classes: usize) -> Self {
        HeadSpec {
            layers: vec![HeadLayer::Linear(num_classes)],
        }
    }

    /// dropout(0.2), linear(1000), [activation], dropout(0.2), linear(classes).
    ///
    /// Without the activation the two linear maps collapse into one, so a
    /// rectifier is inserted by default; `None` removes it.
    pub fn mobilenet_bt(num_classes: usize, activation: Option<ActivationKind>) -> Self {
        let mut layers = vec![HeadLayer::Dropout(0.2), HeadLayer::Linear(1000)];
        layers.extend(activation.map(HeadLayer::Activation));
        layers.extend([HeadLayer::Dropout(0.2), HeadLayer::Linear(num_classes)]);
        HeadSpec { layers }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.layers.last() {
            Some(HeadLayer::Linear(n)) if *n == num_classes => {}
            _ => {
                return Err(Error::Config(format!(
                    "head must end in a linear layer with {num_classes} outputs"
                )))
            }
        }
        for layer in &self.layers {
            match *layer {
                HeadLayer::Dropout(p) if !(p > 0.0 && p < 1.0) => {
                    return Err(Error::Config(format!("head dropout probability {p} outside (0, 1)")))
                }
                HeadLayer::Linear(0) => return Err(Error::Config("head linear layer with 0 outputs".into())),
                _ => {}
            }
        }
        Ok(())
    }

    fn is_single_linear(&self) -> bool {
        matches!(self.layers.as_slice(), [HeadLayer::Linear(_)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneId,
    pub freeze_policy: FreezePolicy,
    pub head: HeadSpec,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn baseline(backbone: BackboneId) -> Self {
        ModelSpec {
            backbone,
            freeze_policy: FreezePolicy::FreezeAllButFinal,
            head: HeadSpec::single_linear(NUM_CLASSES),
            num_classes: NUM_CLASSES,
        }
    }

    pub fn mobilenet_bt(head_activation: Option<ActivationKind>) -> Self {
        ModelSpec {
            backbone: BackboneId::MobilenetV2,
            freeze_policy: FreezePolicy::UnfreezeAll,
            head: HeadSpec::mobilenet_bt(NUM_CLASSES, head_activation),
            num_classes: NUM_CLASSES,
        }
    }

    pub fn for_kind(kind: ModelKind, head_activation: Option<ActivationKind>) -> Self {
        match kind {
            ModelKind::Baseline(b) => ModelSpec::baseline(b),
            ModelKind::MobilenetBt => ModelSpec::mobilenet_bt(head_activation),
        }
    }

    /// Baselines freeze everything but a single linear head; MobileNet-BT is
    /// the unfrozen MobileNetV2 with a custom head. Other mixes are rejected.
    pub fn kind(&self) -> Result<ModelKind> {
        self.head.validate(self.num_classes)?;
        match (self.freeze_policy, self.head.is_single_linear()) {
            (FreezePolicy::FreezeAllButFinal, true) => Ok(ModelKind::Baseline(self.backbone)),
            (FreezePolicy::UnfreezeAll, false) if self.backbone == BackboneId::MobilenetV2 => {
                Ok(ModelKind::MobilenetBt)
            }
            _ => Err(Error::Config(format!(
                "unsupported model configuration: {} with {:?} and a {}-layer head",
                self.backbone,
                self.freeze_policy,
                self.head.layers.len()
            ))),
        }
    }
}

/// Where backbone weights come from.
#[derive(Debug, Clone)]
pub enum WeightSource {
    Pretrained(WeightsStore),
    /// Reference-style random initialization; for tests and dry runs.
    Random,
}

/// A network the training loop and evaluator can drive.
pub trait Network: Layer {
    fn model_id(&self) -> &str;

    /// Expected square input side.
    fn input_size(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Called before each training epoch.
    fn begin_epoch(&mut self, _epoch: usize) {}
}

/// Backbone plus head. Parameters of the backbone are named as in the
/// reference implementation; head parameters live under `head.`.
pub struct Model {
    kind: ModelKind,
    spec: ModelSpec,
    backbone: Sequential,
    head: Sequential,
    input_size: usize,
    backbone_frozen: bool,
    backbone_trained: bool,
}

pub const DEFAULT_INPUT_SIZE: usize = 224;

impl Model {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn head(&self) -> &Sequential {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Sequential {
        &mut self.head
    }

    pub fn backbone(&self) -> &Sequential {
        &self.backbone
    }

    /// Overrides the accepted input side. The convolutional backbones are
    /// size-agnostic; VGG pools to 7×7 regardless.
    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }

    /// Freezes every backbone parameter and keeps the backbone in inference
    /// mode, leaving only the head trainable.
    pub fn freeze_backbone(&mut self) {
        set_trainable(&mut self.backbone, false);
        self.backbone_frozen = true;
    }

    pub fn backbone_frozen(&self) -> bool {
        self.backbone_frozen
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.input_size;
        if x.rank() != 4 || x.shape()[1..] != [3, s, s] {
            return Err(Error::Contract(format!(
                "{} expects a (B, 3, {s}, {s}) batch, got {:?}",
                self.kind.id(),
                x.shape()
            )));
        }
        Ok(())
    }
}

impl Layer for Model {
    /// An empty batch yields an empty `(0, classes)` result.
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        self.check_input(&x)?;
        if x.shape()[0] == 0 {
            return Ok(Tensor::zeros(&[0, self.spec.num_classes]));
        }
        // Frozen backbones stay in inference mode, batch norm included.
        self.backbone_trained = ctx.is_train() && !self.backbone_frozen;
        let features = if self.backbone_trained {
            self.backbone.forward(x, ctx)?
        } else {
            let mut eval = Ctx::new(Mode::Eval, ctx.rng.clone());
            self.backbone.forward(x, &mut eval)?
        };
        self.head.forward(features, ctx)
    }

    /// Returns the input gradient, or an empty tensor when the backbone is
    /// frozen and therefore not back-propagated.
    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let g = self.head.backward(grad)?;
        if std::mem::take(&mut self.backbone_trained) {
            self.backbone.backward(g)
        } else {
            Ok(Tensor::zeros(&[0]))
        }
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.backbone.visit(prefix, f);
        self.head.visit(&crate::nn::join_name(prefix, "head"), f);
    }

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>)) {
        self.backbone.visit_ref(prefix, f);
        self.head.visit_ref(&crate::nn::join_name(prefix, "head"), f);
    }
}

impl Network for Model {
    fn model_id(&self) -> &str {
        self.kind.id()
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }
}

/// A backbone as published, including its 1000-class classifier.
pub fn random_backbone(id: BackboneId, seed: u64) -> Backbone {
    let mut rng = stream_rng(seed, Stream::Init, &[id.code()]);
    arch::build(id, &mut rng)
}

fn backbone_for(id: BackboneId, weights: &WeightSource, seed: u64) -> Result<Backbone> {
    match weights {
        WeightSource::Pretrained(store) => load_pretrained_backbone(id, store),
        WeightSource::Random => Ok(random_backbone(id, seed)),
    }
}

fn build_head(spec: &HeadSpec, width: usize, seed: u64) -> Result<Sequential> {
    let mut rng = stream_rng(seed, Stream::Init, &[u64::MAX]);
    let mut head = Sequential::new();
    let mut fin = width;
    for layer in &spec.layers {
        let name = head.len().to_string();
        match *layer {
            HeadLayer::Dropout(p) => {
                head.push(name, Dropout::new(p)?);
            }
            HeadLayer::Linear(out) => {
                head.push(name, arch::linear_default(fin, out, &mut rng));
                fin = out;
            }
            HeadLayer::Activation(kind) => {
                head.push(name, Activation::new(kind));
            }
        }
    }
    Ok(head)
}

/// Builds any of the five configurations from its spec.
pub fn build_model(spec: &ModelSpec, weights: &WeightSource, seed: u64) -> Result<Model> {
    let kind = spec.kind()?;
    let backbone = backbone_for(spec.backbone, weights, seed)?;
    let head = build_head(&spec.head, backbone.width, seed)?;
    let mut model = Model {
        kind,
        spec: spec.clone(),
        backbone: backbone.features,
        head,
        input_size: DEFAULT_INPUT_SIZE,
        backbone_frozen: false,
        backbone_trained: false,
    };
    if spec.freeze_policy == FreezePolicy::FreezeAllButFinal {
        model.freeze_backbone();
    }
    Ok(model)
}

/// Frozen backbone with its classifier replaced by one trainable linear
/// layer from the feature width to `num_classes`.
pub fn build_transfer_baseline(id: BackboneId, num_classes: usize, weights: &WeightSource, seed: u64) -> Result<Model> {
    let mut spec = ModelSpec::baseline(id);
    spec.num_classes = num_classes;
    spec.head = HeadSpec::single_linear(num_classes);
    build_model(&spec, weights, seed)
}

/// Fully trainable MobileNetV2 with the two-layer dropout head.
pub fn build_mobilenet_bt(
    num_classes: usize,
    head_activation: Option<ActivationKind>,
    weights: &WeightSource,
    seed: u64,
) -> Result<Model> {
    let mut spec = ModelSpec::mobilenet_bt(head_activation);
    spec.num_classes = num_classes;
    spec.head = HeadSpec::mobilenet_bt(num_classes, head_activation);
    build_model(&spec, weights, seed)
}

/// (total, trainable) scalar parameter counts.
pub fn count_parameters(model: &dyn Layer) -> (usize, usize) {
    count_params(model)
}

impl Layer for Backbone {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let f = self.features.forward(x, ctx)?;
        self.classifier.forward(f, ctx)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let g = self.classifier.backward(grad)?;
        self.features.backward(g)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.features.visit(prefix, f);
        self.classifier.visit(prefix, f);
    }

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>)) {
        self.features.visit_ref(prefix, f);
        self.classifier.visit_ref(prefix, f);
    }
}
