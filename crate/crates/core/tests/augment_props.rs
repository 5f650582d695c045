use std::path::Path;

use image::{Rgb, RgbImage};
use mribench_core::augment::{
    build_eval_pipeline, build_train_pipeline, normalize, random_flip, to_unit_range, FlipAxis, PreprocessConfig,
    IMAGENET_MEAN, IMAGENET_STD,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut state = seed;
    RgbImage::from_fn(w, h, |_, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let b = state.to_le_bytes();
        Rgb([b[5], b[6], b[7]])
    })
}

fn bits(x: &[f32]) -> Vec<u32> {
    x.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_output_is_3x224x224(w in 1u32..400, h in 1u32..400, seed in any::<u64>(), epoch in 0usize..100) {
        let cfg = PreprocessConfig::default();
        let img = image(w, h, seed);
        for p in [build_train_pipeline(&cfg).unwrap(), build_eval_pipeline(&cfg).unwrap()] {
            let out = p.apply_seeded(img.clone(), seed, epoch, 0, Path::new("x")).unwrap();
            prop_assert_eq!(out.shape(), [3, 224, 224]);
            prop_assert_eq!(out.data.len(), 3 * 224 * 224);
        }
    }

    #[test]
    fn normalized_values_stay_in_channel_bounds(w in 1u32..64, h in 1u32..64, seed in any::<u64>()) {
        let cfg = PreprocessConfig::default();
        let out = build_train_pipeline(&cfg).unwrap().apply_seeded(image(w, h, seed), seed, 0, 0, Path::new("x")).unwrap();
        let plane = 224 * 224;
        for c in 0..3 {
            let lo = (0.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            let hi = (1.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            for &v in &out.data[c * plane..(c + 1) * plane] {
                prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5, "{v} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn unit_range_then_normalize(w in 1u32..40, h in 1u32..40, seed in any::<u64>()) {
        let img = image(w, h, seed);
        let mut x = to_unit_range(&img);
        prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        let raw = x.clone();
        normalize(&mut x, &IMAGENET_MEAN, &IMAGENET_STD).unwrap();
        let plane = (w * h) as usize;
        for (i, (&a, &b)) in raw.iter().zip(&x).enumerate() {
            let c = i / plane;
            prop_assert!((b - (a - IMAGENET_MEAN[c]) / IMAGENET_STD[c]).abs() < 1e-5);
        }
    }

    #[test]
    fn flip_is_an_involution(w in 1u32..50, h in 1u32..50, seed in any::<u64>()) {
        let img = image(w, h, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            let twice = random_flip(random_flip(img.clone(), axis, 1.0, &mut rng), axis, 1.0, &mut rng);
            prop_assert_eq!(&twice, &img);
        }
    }

    #[test]
    fn eval_is_pure_and_samples_are_isolated(seed in any::<u64>(), epoch in 0usize..50, i in 0usize..1000) {
        let cfg = PreprocessConfig::default();
        let img = image(40, 30, seed);
        let eval = build_eval_pipeline(&cfg).unwrap();
        let a = eval.apply_seeded(img.clone(), seed, epoch, i, Path::new("a")).unwrap();
        let b = eval.apply_seeded(img.clone(), seed ^ 1, epoch + 1, i + 1, Path::new("b")).unwrap();
        prop_assert_eq!(bits(&a.data), bits(&b.data));

        // Sample i's result does not depend on whether other samples were
        // augmented first.
        let train = build_train_pipeline(&cfg).unwrap();
        let alone = train.apply_seeded(img.clone(), seed, epoch, i, Path::new("x")).unwrap();
        for j in 0..3 {
            train.apply_seeded(image(40, 30, j), seed, epoch, i + j as usize + 1, Path::new("y")).unwrap();
        }
        let after = train.apply_seeded(img, seed, epoch, i, Path::new("x")).unwrap();
        prop_assert_eq!(bits(&alone.data), bits(&after.data));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        PreprocessConfig { flip_prob: 1.5, ..PreprocessConfig::default() },
        PreprocessConfig { target_size: 0, ..PreprocessConfig::default() },
        PreprocessConfig { std: [0.0, 1.0, 1.0], ..PreprocessConfig::default() },
        PreprocessConfig { rotation_degrees: -1.0, ..PreprocessConfig::default() },
    ] {
        assert!(build_train_pipeline(&cfg).is_err(), "{cfg:?}");
    }
}

#[test]
fn eval_pipeline_has_no_random_stages() {
    let cfg = PreprocessConfig::default();
    assert!(!build_eval_pipeline(&cfg).unwrap().is_stochastic());
    assert!(build_train_pipeline(&cfg).unwrap().is_stochastic());
}
