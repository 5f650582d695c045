//! The four backbone architectures, laid out with the parameter names and
//! initialization of the reference (torchvision) implementations so that
//! published weight files load by name.

use rand::Rng;

use super::BackboneId;
use crate::nn::init::{default_bound, kaiming_normal_fan_out, normal, uniform};
use crate::nn::{
    Activation, ActivationKind, AdaptiveAvgPool2d, BatchNorm2d, Conv2d, Dropout, Flatten, Linear, MaxPool2d,
    Residual, Sequential, SqueezeExcite,
};

/// A backbone split at its final classification layer.
pub struct Backbone {
    pub id: BackboneId,
    /// Input image to a `(B, width)` feature vector.
    pub features: Sequential,
    pub width: usize,
    /// The 1000-class pretraining classifier, children named by full path.
    pub classifier: Sequential,
}

impl std::fmt::Debug for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backbone").field("id", &self.id).field("width", &self.width).finish_non_exhaustive()
    }
}

enum LinearInit {
    /// N(0, 0.01), zero bias.
    Normal,
    /// U(±1/sqrt(fan_in)) for weight and bias.
    Default,
    /// U(±1/sqrt(fan_out)), zero bias.
    FanOutUniform,
}

fn conv(cin: usize, cout: usize, k: usize, stride: usize, groups: usize, bias: bool, rng: &mut impl Rng) -> Conv2d {
    let mut c = Conv2d::new(cin, cout, k, stride, (k - 1) / 2, groups, bias);
    let shape = c.weight_shape().to_vec();
    c.weight_mut().value = kaiming_normal_fan_out(&shape, rng);
    c
}

pub(crate) fn linear_default(cin: usize, cout: usize, rng: &mut impl Rng) -> Linear {
    linear(cin, cout, LinearInit::Default, rng)
}

fn linear(cin: usize, cout: usize, init: LinearInit, rng: &mut impl Rng) -> Linear {
    let mut l = Linear::new(cin, cout);
    let shape = [cout, cin];
    match init {
        LinearInit::Normal => l.weight_mut().value = normal(&shape, 0.01, rng),
        LinearInit::Default => {
            let bound = default_bound(&shape);
            l.weight_mut().value = uniform(&shape, bound, rng);
            l.bias_mut().value = uniform(&[cout], bound, rng);
        }
        LinearInit::FanOutUniform => {
            l.weight_mut().value = uniform(&shape, 1.0 / (cout as f32).sqrt(), rng)
        }
    }
    l
}

/// `0: conv, 1: bn, [2: act]`.
fn conv_bn_act(
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    groups: usize,
    act: Option<ActivationKind>,
    rng: &mut impl Rng,
) -> Sequential {
    let mut s = Sequential::new()
        .with("0", conv(cin, cout, k, stride, groups, false, rng))
        .with("1", BatchNorm2d::new(cout));
    if let Some(a) = act {
        s.push("2", Activation::new(a));
    }
    s
}

fn dropout(p: f32) -> Dropout {
    Dropout::new(p).expect("constant probability")
}

fn pooled(features: Sequential) -> Sequential {
    Sequential::new()
        .with("features", features)
        .with("avgpool", AdaptiveAvgPool2d::global())
        .with("flatten", Flatten::new())
}

pub fn build(id: BackboneId, rng: &mut impl Rng) -> Backbone {
    match id {
        BackboneId::MobilenetV2 => mobilenet_v2(rng),
        BackboneId::Resnet18 => resnet18(rng),
        BackboneId::EfficientnetB0 => efficientnet_b0(rng),
        BackboneId::Vgg16 => vgg16(rng),
    }
}

fn mobilenet_v2(rng: &mut impl Rng) -> Backbone {
    const SETTINGS: [(usize, usize, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let relu6 = Some(ActivationKind::Relu6);
    let mut features = Sequential::new();
    features.push("0", conv_bn_act(3, 32, 3, 2, 1, relu6, rng));
    let mut cin = 32;
    for (t, c, n, s) in SETTINGS {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let hidden = cin * t;
            let mut body = Sequential::new();
            if t != 1 {
                body.push(body.len().to_string(), conv_bn_act(cin, hidden, 1, 1, 1, relu6, rng));
            }
            body.push(body.len().to_string(), conv_bn_act(hidden, hidden, 3, stride, hidden, relu6, rng));
            body.push(body.len().to_string(), conv(hidden, c, 1, 1, 1, false, rng));
            body.push(body.len().to_string(), BatchNorm2d::new(c));
            let block = Sequential::new().with("conv", body);
            let name = features.len().to_string();
            if stride == 1 && cin == c {
                features.push(name, Residual::new(block));
            } else {
                features.push(name, block);
            }
            cin = c;
        }
    }
    features.push("18", conv_bn_act(320, 1280, 1, 1, 1, relu6, rng));
    let classifier = Sequential::new()
        .with("classifier.0", dropout(0.2))
        .with("classifier.1", linear(1280, 1000, LinearInit::Normal, rng));
    Backbone {
        id: BackboneId::MobilenetV2,
        features: pooled(features),
        width: 1280,
        classifier,
    }
}

fn resnet18(rng: &mut impl Rng) -> Backbone {
    let mut net = Sequential::new()
        .with("conv1", conv(3, 64, 7, 2, 1, false, rng))
        .with("bn1", BatchNorm2d::new(64))
        .with("relu", Activation::new(ActivationKind::Relu))
        .with("maxpool", MaxPool2d::new(3, 2, 1));
    let mut cin = 64;
    for (stage, width) in [64, 128, 256, 512].into_iter().enumerate() {
        let mut layer = Sequential::new();
        for i in 0..2 {
            let stride = if stage > 0 && i == 0 { 2 } else { 1 };
            let body = Sequential::new()
                .with("conv1", conv(cin, width, 3, stride, 1, false, rng))
                .with("bn1", BatchNorm2d::new(width))
                .with("relu", Activation::new(ActivationKind::Relu))
                .with("conv2", conv(width, width, 3, 1, 1, false, rng))
                .with("bn2", BatchNorm2d::new(width));
            let mut block = Residual::new(body).with_post(Activation::new(ActivationKind::Relu));
            if stride != 1 || cin != width {
                block = block.with_shortcut(
                    Sequential::new()
                        .with("0", conv(cin, width, 1, stride, 1, false, rng))
                        .with("1", BatchNorm2d::new(width)),
                );
            }
            layer.push(i.to_string(), block);
            cin = width;
        }
        net.push(format!("layer{}", stage + 1), layer);
    }
    net.push("avgpool", AdaptiveAvgPool2d::global());
    net.push("flatten", Flatten::new());
    let classifier = Sequential::new().with("fc", linear(512, 1000, LinearInit::Default, rng));
    Backbone {
        id: BackboneId::Resnet18,
        features: net,
        width: 512,
        classifier,
    }
}

fn efficientnet_b0(rng: &mut impl Rng) -> Backbone {
    // (expand ratio, kernel, stride, in, out, repeats)
    const SETTINGS: [(usize, usize, usize, usize, usize, usize); 7] = [
        (1, 3, 1, 32, 16, 1),
        (6, 3, 2, 16, 24, 2),
        (6, 5, 2, 24, 40, 2),
        (6, 3, 2, 40, 80, 3),
        (6, 5, 1, 80, 112, 3),
        (6, 5, 2, 112, 192, 4),
        (6, 3, 1, 192, 320, 1),
    ];
    const STOCHASTIC_DEPTH: f32 = 0.2;
    let silu = Some(ActivationKind::Silu);
    let total_blocks: usize = SETTINGS.iter().map(|s| s.5).sum();
    let mut features = Sequential::new();
    features.push("0", conv_bn_act(3, 32, 3, 2, 1, silu, rng));
    let mut block_id = 0;
    for (expand, k, s, stage_in, out, n) in SETTINGS {
        let mut stage = Sequential::new();
        for i in 0..n {
            let (cin, stride) = if i == 0 { (stage_in, s) } else { (out, 1) };
            let hidden = cin * expand;
            let mut body = Sequential::new();
            if expand != 1 {
                body.push(body.len().to_string(), conv_bn_act(cin, hidden, 1, 1, 1, silu, rng));
            }
            body.push(body.len().to_string(), conv_bn_act(hidden, hidden, k, stride, hidden, silu, rng));
            let mut se = SqueezeExcite::new(hidden, (cin / 4).max(1), ActivationKind::Silu);
            let shape = se.fc1_mut().weight_shape().to_vec();
            se.fc1_mut().weight_mut().value = kaiming_normal_fan_out(&shape, rng);
            let shape = se.fc2_mut().weight_shape().to_vec();
            se.fc2_mut().weight_mut().value = kaiming_normal_fan_out(&shape, rng);
            body.push(body.len().to_string(), se);
            body.push(body.len().to_string(), conv_bn_act(hidden, out, 1, 1, 1, None, rng));
            let block = Sequential::new().with("block", body);
            let p = STOCHASTIC_DEPTH * block_id as f32 / total_blocks as f32;
            if stride == 1 && cin == out {
                stage.push(i.to_string(), Residual::new(block).with_drop_path(p));
            } else {
                stage.push(i.to_string(), block);
            }
            block_id += 1;
        }
        features.push(features.len().to_string(), stage);
    }
    features.push("8", conv_bn_act(320, 1280, 1, 1, 1, silu, rng));
    let classifier = Sequential::new()
        .with("classifier.0", dropout(0.2))
        .with("classifier.1", linear(1280, 1000, LinearInit::FanOutUniform, rng));
    Backbone {
        id: BackboneId::EfficientnetB0,
        features: pooled(features),
        width: 1280,
        classifier,
    }
}

fn vgg16(rng: &mut impl Rng) -> Backbone {
    const CONFIG: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
    let mut features = Sequential::new();
    let mut cin = 3;
    for width in CONFIG {
        if width == 0 {
            features.push(features.len().to_string(), MaxPool2d::new(2, 2, 0));
            continue;
        }
        features.push(features.len().to_string(), conv(cin, width, 3, 1, 1, true, rng));
        features.push(features.len().to_string(), Activation::new(ActivationKind::Relu));
        cin = width;
    }
    let head = Sequential::new()
        .with("0", linear(512 * 7 * 7, 4096, LinearInit::Normal, rng))
        .with("1", Activation::new(ActivationKind::Relu))
        .with("2", dropout(0.5))
        .with("3", linear(4096, 4096, LinearInit::Normal, rng))
        .with("4", Activation::new(ActivationKind::Relu))
        .with("5", dropout(0.5));
    let net = Sequential::new()
        .with("features", features)
        .with("avgpool", AdaptiveAvgPool2d::new(7, 7))
        .with("flatten", Flatten::new())
        .with("classifier", head);
    let classifier = Sequential::new().with("classifier.6", linear(4096, 1000, LinearInit::Normal, rng));
    Backbone {
        id: BackboneId::Vgg16,
        features: net,
        width: 4096,
        classifier,
    }
}
