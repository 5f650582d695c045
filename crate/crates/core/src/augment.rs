//! Train-time augmentation and eval-time preprocessing.
//!
//! Train: horizontal flip, vertical flip, rotation, resize, scale to [0, 1],
//! per-channel normalization. Eval: the last three stages only.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::Rgb;
use imageproc::geometric_transformations::{rotate_about_center, Interpolation};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::ImagePixels;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub flip_prob: f64,
    pub rotation_degrees: f64,
    pub target_size: u32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            flip_prob: 0.5,
            rotation_degrees: 10.0,
            target_size: 224,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "flip_prob must lie in [0, 1], got {}",
                self.flip_prob
            )));
        }
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees.is_finite()) {
            return Err(Error::Config(format!(
                "rotation_degrees must be >= 0, got {}",
                self.rotation_degrees
            )));
        }
        if self.target_size == 0 {
            return Err(Error::Config("target_size must be positive".into()));
        }
        check_std(&self.std)?;
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!("non-finite mean {:?}", self.mean)));
        }
        Ok(())
    }
}

fn check_std(std: &[f32; 3]) -> Result<()> {
    if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::Config(format!(
            "std components must be positive, got {std:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

/// Mirrors `img` along `axis` with probability `p`.
pub fn random_flip(img: ImagePixels, axis: FlipAxis, p: f64, rng: &mut dyn RngCore) -> ImagePixels {
    if !rng.random_bool(p) {
        return img;
    }
    let mut img = img;
    match axis {
        FlipAxis::Horizontal => imageops::flip_horizontal_in_place(&mut img),
        FlipAxis::Vertical => imageops::flip_vertical_in_place(&mut img),
    }
    img
}

/// Rotates about the image center by an angle drawn uniformly from
/// `[-degrees, degrees]`. Same canvas, bilinear sampling, black fill.
pub fn random_rotation(img: ImagePixels, degrees: f64, rng: &mut dyn RngCore) -> ImagePixels {
    let angle = rng.random_range(-degrees..=degrees);
    rotate(&img, angle)
}

pub fn rotate(img: &ImagePixels, angle_degrees: f64) -> ImagePixels {
    if angle_degrees == 0.0 {
        return img.clone();
    }
    rotate_about_center(
        img,
        angle_degrees.to_radians() as f32,
        Interpolation::Bilinear,
        Rgb([0, 0, 0]),
    )
}

/// Bilinear resize to `size`×`size`; aspect ratio is not preserved.
pub fn resize(img: &ImagePixels, size: u32) -> ImagePixels {
    if img.dimensions() == (size, size) {
        return img.clone();
    }
    imageops::resize(img, size, size, FilterType::Triangle)
}

/// Channel-major (CHW) floats in [0, 1].
pub fn to_unit_range(img: &ImagePixels) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut out = vec![0.0f32; 3 * plane];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = p[c] as f32 / 255.0;
        }
    }
    out
}

/// In-place `(x_c - mean_c) / std_c` on a CHW buffer.
pub fn normalize(x: &mut [f32], mean: &[f32; 3], std: &[f32; 3]) -> Result<()> {
    check_std(std)?;
    if x.len() % 3 != 0 {
        return Err(Error::Contract(format!(
            "CHW buffer length {} is not a multiple of 3",
            x.len()
        )));
    }
    let plane = x.len() / 3;
    for (c, chunk) in x.chunks_mut(plane.max(1)).enumerate().take(3) {
        let inv = 1.0 / std[c];
        for v in chunk {
            *v = (*v - mean[c]) * inv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    /// CHW, 3 channels.
    pub data: Vec<f32>,
    pub size: usize,
    pub provenance: PathBuf,
}

impl NormalizedImage {
    pub fn shape(&self) -> [usize; 3] {
        [3, self.size, self.size]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Flip { axis: FlipAxis, p: f64 },
    Rotate { degrees: f64 },
    Resize { size: u32 },
    UnitRange,
    Normalize { mean: [f32; 3], std: [f32; 3] },
}

impl Stage {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Stage::Flip { .. } | Stage::Rotate { .. })
    }
}

/// An ordered list of stages ending in a normalized CHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    stages: Vec<Stage>,
    size: usize,
}

pub fn build_train_pipeline(cfg: &PreprocessConfig) -> Result<Pipeline> {
    cfg.validate()?;
    let mut stages = vec![
        Stage::Flip {
            axis: FlipAxis::Horizontal,
            p: cfg.flip_prob,
        },
        Stage::Flip {
            axis: FlipAxis::Vertical,
            p: cfg.flip_prob,
        },
        Stage::Rotate {
            degrees: cfg.rotation_degrees,
        },
    ];
    stages.extend(tail_stages(cfg));
    Ok(Pipeline {
        stages,
        size: cfg.target_size as usize,
    })
}

pub fn build_eval_pipeline(cfg: &PreprocessConfig) -> Result<Pipeline> {
    cfg.validate()?;
    Ok(Pipeline {
        stages: tail_stages(cfg),
        size: cfg.target_size as usize,
    })
}

fn tail_stages(cfg: &PreprocessConfig) -> Vec<Stage> {
    vec![
        Stage::Resize {
            size: cfg.target_size,
        },
        Stage::UnitRange,
        Stage::Normalize {
            mean: cfg.mean,
            std: cfg.std,
        },
    ]
}

impl Pipeline {
    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn output_size(&self) -> usize {
        self.size
    }

    pub fn is_stochastic(&self) -> bool {
        self.stages.iter().any(Stage::is_stochastic)
    }

    pub fn apply(
        &self,
        img: ImagePixels,
        rng: &mut dyn RngCore,
        provenance: &Path,
    ) -> Result<NormalizedImage> {
        let mut pixels = img;
        let mut tensor: Option<Vec<f32>> = None;
        for stage in &self.stages {
            match stage {
                Stage::Flip { axis, p } => pixels = random_flip(pixels, *axis, *p, rng),
                Stage::Rotate { degrees } => pixels = random_rotation(pixels, *degrees, rng),
                Stage::Resize { size } => pixels = resize(&pixels, *size),
                Stage::UnitRange => tensor = Some(to_unit_range(&pixels)),
                Stage::Normalize { mean, std } => {
                    let t = tensor
                        .as_mut()
                        .ok_or_else(|| Error::Contract("normalize before unit-range".into()))?;
                    normalize(t, mean, std)?;
                }
            }
        }
        let data = tensor.ok_or_else(|| Error::Contract("pipeline has no unit-range stage".into()))?;
        if data.len() != 3 * self.size * self.size {
            return Err(Error::Contract(format!(
                "pipeline produced {} values, expected 3x{}x{}",
                data.len(),
                self.size,
                self.size
            )));
        }
        Ok(NormalizedImage {
            data,
            size: self.size,
            provenance: provenance.to_path_buf(),
        })
    }

    /// Applies the pipeline with the per-sample stream for
    /// (`seed`, `epoch`, `sample`), so samples never share random state.
    pub fn apply_seeded(
        &self,
        img: ImagePixels,
        seed: u64,
        epoch: usize,
        sample: usize,
        provenance: &Path,
    ) -> Result<NormalizedImage> {
        let mut rng = stream_rng(seed, Stream::Augment, &[epoch as u64, sample as u64]);
        self.apply(img, &mut rng, provenance)
    }
}
