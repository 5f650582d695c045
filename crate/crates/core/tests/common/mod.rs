#![allow(dead_code)]

use std::path::Path;

use image::{Rgb, RgbImage};
use mribench_core::augment::PreprocessConfig;
use mribench_core::data::{ClassLabel, MemorySource};
use mribench_core::nn::{Ctx, Layer, Slot, SlotRef, Tensor};
use mribench_core::zoo::Network;
use mribench_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PALETTE: [[u8; 3]; 4] = [[220, 40, 40], [40, 200, 60], [40, 60, 220], [230, 210, 40]];

/// `per_class` noisy solid-color images per class, `side` pixels square.
pub fn color_source(per_class: usize, side: u32, seed: u64) -> MemorySource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for i in 0..per_class * 4 {
        let label = ClassLabel::from_id(i % 4).unwrap();
        let base = PALETTE[label.id()];
        let img = RgbImage::from_fn(side, side, |_, _| {
            Rgb(base.map(|c| (c as i32 + rng.random_range(-12..=12)).clamp(0, 255) as u8))
        });
        samples.push((img, label));
    }
    MemorySource::new(samples)
}

/// Preprocessing that leaves raw `value / 255` intensities, with no
/// augmentation, at `size` pixels.
pub fn identity_preprocess(size: u32) -> PreprocessConfig {
    PreprocessConfig {
        flip_prob: 0.0,
        rotation_degrees: 0.0,
        target_size: size,
        mean: [0.0; 3],
        std: [1.0; 3],
    }
}

/// Images that encode their own index (red) and label (green) so a
/// scripted network can decide which ones to classify correctly.
pub fn indexed_source(n: usize, side: u32) -> MemorySource {
    assert!(n <= 256);
    MemorySource::new(
        (0..n)
            .map(|i| {
                let label = ClassLabel::from_id(i % 4).unwrap();
                let img = RgbImage::from_pixel(side, side, Rgb([i as u8, (label.id() * 60) as u8, 0]));
                (img, label)
            })
            .collect(),
    )
}

/// Gets `correct[epoch]` of the indexed validation images right, where an
/// image's index is its red channel. Its only state is a buffer holding the
/// epoch it was last trained in, so restored and checkpointed states reveal
/// which epoch they came from.
pub struct ScriptedNet {
    pub correct: Vec<usize>,
    pub size: usize,
    epoch: usize,
    tag: Tensor,
}

impl ScriptedNet {
    pub fn new(correct: Vec<usize>, size: usize) -> Self {
        ScriptedNet {
            correct,
            size,
            epoch: 0,
            tag: Tensor::zeros(&[1]),
        }
    }

    pub fn tag(&self) -> usize {
        self.tag.data()[0] as usize
    }
}

impl Layer for ScriptedNet {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let (b, _, h, w) = x.dims4();
        let mut out = Tensor::zeros(&[b, 4]);
        if ctx.is_train() {
            return Ok(out);
        }
        let plane = h * w;
        for i in 0..b {
            let px = &x.data()[i * 3 * plane..];
            let index = (px[0] * 255.0).round() as usize;
            let label = ((px[plane] * 255.0).round() as usize) / 60;
            let k = self.correct.get(self.epoch).copied().unwrap_or(0);
            let pred = if index < k { label } else { (label + 1) % 4 };
            out.data_mut()[i * 4 + pred] = 10.0;
        }
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(&[grad.shape()[0], 3, self.size, self.size]))
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&mribench_core::nn::join_name(prefix, "epoch_tag"), Slot::Buffer(&mut self.tag));
    }

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>)) {
        f(&mribench_core::nn::join_name(prefix, "epoch_tag"), SlotRef::Buffer(&self.tag));
    }
}

impl Network for ScriptedNet {
    fn model_id(&self) -> &str {
        "scripted"
    }

    fn input_size(&self) -> usize {
        self.size
    }

    fn num_classes(&self) -> usize {
        4
    }

    fn begin_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.tag = Tensor::full(&[1], epoch as f32);
    }
}

/// Earliest index of the maximum.
pub fn earliest_max(xs: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Epochs an early-stopping run consumes: stop once `patience` epochs have
/// passed without a strict improvement.
pub fn oracle_epochs(seq: &[usize], max_epochs: usize, patience: usize) -> usize {
    for n in 1..=max_epochs {
        let best = earliest_max(&seq[..n]);
        if n - 1 - best >= patience {
            return n;
        }
    }
    max_epochs
}

/// Writes a tree of 1x1 PNGs with the given per-class counts.
pub fn write_png_tree(root: &Path, counts: &[(ClassLabel, usize)]) {
    let img = RgbImage::from_pixel(1, 1, Rgb([128, 128, 128]));
    for &(class, n) in counts {
        let dir = root.join(class.name());
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..n {
            img.save(dir.join(format!("{}_{i:04}.png", class.name()))).unwrap();
        }
    }
}
