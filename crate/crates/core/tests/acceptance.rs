//! Acceptance suite: prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Environment:
//! - `MRIBENCH_DATASET_ROOT`: run the split check on a real dataset tree
//!   instead of a generated replica with the same class counts.
//! - `MRIBENCH_EXTENDED=1` (with `MRIBENCH_DATASET_ROOT` and
//!   `MRIBENCH_WEIGHTS_DIR`): run the full-protocol comparison.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use image::{Rgb, RgbImage};
use mribench_core::augment::{build_eval_pipeline, build_train_pipeline, PreprocessConfig};
use mribench_core::data::{
    scan_dataset, stratified_split, ClassLabel, FileSource, Split, SplitManifest,
    SplitRatios,
};
use mribench_core::metrics::{
    accuracy, confusion, evaluate, mean_cross_entropy, per_class_prf, predict, weighted_aggregate, MetricsReport,
    ProbRow,
};
use mribench_core::nn::loss::cross_entropy;
use mribench_core::nn::optim::{Optimizer, OptimizerKind};
use mribench_core::nn::{state_dict, zero_grad, Ctx, Layer, Mode, Sequential, Slot, Tensor};
use mribench_core::train::{lr_at, train, CheckpointSink, StepLr, TrainConfig, TrainData};
use mribench_core::zoo::{
    build_mobilenet_bt, build_model, build_transfer_baseline, count_parameters, load_checkpoint, BackboneId,
    ModelKind, ModelSpec, Network, WeightSource, WeightsStore,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METRIC_TOL: f64 = 1e-9;
const METRIC_INSTANCES: usize = 1000;
const METRIC_BUDGET: Duration = Duration::from_secs(10);
const IDENTITY_TOL: f64 = 1e-12;
const LR_EPOCHS: usize = 64;
const STOPPING_SEQUENCES: usize = 200;
const PATIENCE: usize = 8;
const FLIP_DRAWS: usize = 10_000;
const FLIP_BAND: (f64, f64) = (0.48, 0.52);
const GRAD_REL_TOL: f64 = 1e-3;
const OVERFIT_IMAGES: usize = 32;
const OVERFIT_EPOCHS: usize = 30;
const OVERFIT_TARGET: f64 = 0.95;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const EXTENDED_MIN_ACC: f64 = 0.96;
const EXTENDED_MIN_GAP: f64 = 0.08;

/// Class counts of the public corpus and the split sizes expected for them.
const CORPUS: [(ClassLabel, usize); 4] = [
    (ClassLabel::Glioma, 1621),
    (ClassLabel::Meningioma, 1645),
    (ClassLabel::NoTumor, 2000),
    (ClassLabel::Pituitary, 1757),
];
const CORPUS_TOTAL: usize = 7023;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::*;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

// ---------------------------------------------------------------- metrics

struct Oracle {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

/// Brute-force weighted metrics straight from the definitions.
fn oracle(y_true: &[usize], y_pred: &[usize]) -> Oracle {
    let n = y_true.len() as f64;
    let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count() as f64;
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..4 {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                _ => {}
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let w = (tp + fneg) / n;
        precision += w * p;
        recall += w * r;
        f1 += w * f;
    }
    Oracle {
        accuracy: correct / n,
        precision,
        recall,
        f1,
    }
}

fn oracle_loss(probs: &[ProbRow], y: &[usize]) -> f64 {
    -probs.iter().zip(y).map(|(p, &c)| p[c].max(1e-12).ln()).sum::<f64>() / y.len() as f64
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<ProbRow>) {
    let n = rng.random_range(1..=50);
    // Skewed label and prediction draws make empty classes common.
    let skew: usize = rng.random_range(1..=4);
    let y_true: Vec<usize> = (0..n).map(|_| rng.random_range(0..skew)).collect();
    let y_pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let probs = (0..n)
        .map(|_| {
            let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.001..1.0f64).powi(3));
            let s: f64 = w.iter().sum();
            w.map(|x| x / s)
        })
        .collect();
    (y_true, y_pred, probs)
}

fn argmax_low(p: &ProbRow) -> usize {
    let mut best = 0;
    for c in 1..4 {
        if p[c] > p[best] {
            best = c;
        }
    }
    best
}

fn criterion_metrics_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..METRIC_INSTANCES {
        let (y_true, y_pred, probs) = random_instance(&mut rng);
        let cm = confusion(&y_true, &y_pred).unwrap();
        let agg = weighted_aggregate(&per_class_prf(&cm)).unwrap();
        let o = oracle(&y_true, &y_pred);
        let loss = mean_cross_entropy(&probs, &y_true).unwrap();
        for (a, b) in [
            (accuracy(&cm).unwrap(), o.accuracy),
            (agg.precision, o.precision),
            (agg.recall, o.recall),
            (agg.f1, o.f1),
            (loss, oracle_loss(&probs, &y_true)),
        ] {
            worst = worst.max((a - b).abs());
        }

        // The full report predicts by argmax of the probability rows.
        let report = MetricsReport::from_predictions("m", "h", &y_true, &probs).unwrap();
        let argmax_pred: Vec<usize> = probs.iter().map(argmax_low).collect();
        let o = oracle(&y_true, &argmax_pred);
        for (a, b) in [
            (report.accuracy, o.accuracy),
            (report.precision, o.precision),
            (report.recall, o.recall),
            (report.f1, o.f1),
            (report.avg_loss, oracle_loss(&probs, &y_true)),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= METRIC_TOL && elapsed < METRIC_BUDGET,
        format!("{METRIC_INSTANCES} instances, max |diff| {worst:.2e} (tol {METRIC_TOL:e}), {elapsed:.2?}"),
    )
}

fn criterion_weighted_recall_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let n = 5 * METRIC_INSTANCES;
    for _ in 0..n {
        let (y_true, y_pred, _) = random_instance(&mut rng);
        let cm = confusion(&y_true, &y_pred).unwrap();
        let agg = weighted_aggregate(&per_class_prf(&cm)).unwrap();
        worst = worst.max((agg.recall - accuracy(&cm).unwrap()).abs());
    }
    check(worst <= IDENTITY_TOL, format!("{n} confusion matrices, max |recall - accuracy| {worst:.2e}"))
}

// ----------------------------------------------------------------- train

fn criterion_lr_schedule() -> Verdict {
    let cfg = TrainConfig::default();
    let mut sched = StepLr::new(&cfg);
    let mut mismatches = Vec::new();
    let mut worst_rel: f64 = 0.0;
    for e in 0..LR_EPOCHS {
        let closed = lr_at(e, &cfg);
        if closed.to_bits() != sched.lr().to_bits() {
            mismatches.push(e);
        }
        let formula = 0.001 * 0.1f64.powi((e / 8) as i32);
        worst_rel = worst_rel.max((closed - formula).abs() / formula);
        sched.advance();
    }
    check(
        mismatches.is_empty() && worst_rel < 1e-15,
        format!(
            "epochs [0, {LR_EPOCHS}): closed form vs scheduler bit-equal{}, max rel diff to 0.001*0.1^k {worst_rel:.1e}",
            if mismatches.is_empty() { String::new() } else { format!(" except {mismatches:?}") }
        ),
    )
}

fn criterion_early_stopping() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let val_n = 60;
    let val = indexed_source(val_n, 2);
    let train_src = indexed_source(4, 2);
    let pre = identity_preprocess(2);
    let pipeline = build_eval_pipeline(&pre).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    let mut stopped = 0;
    for case in 0..STOPPING_SEQUENCES {
        let max_epochs = rng.random_range(1..=40);
        // Few distinct levels so ties and plateaus are frequent.
        let levels = rng.random_range(2..=7);
        let seq: Vec<usize> = (0..max_epochs).map(|_| rng.random_range(0..levels) * val_n / (levels - 1)).collect();
        let mut net = ScriptedNet::new(seq.clone(), 2);
        let cfg = TrainConfig {
            max_epochs,
            batch_size: 4,
            patience: PATIENCE,
            seed: case as u64,
            ..TrainConfig::default()
        };
        let data = TrainData {
            train: &train_src,
            val: &val,
            train_pipeline: &pipeline,
            eval_pipeline: &pipeline,
        };
        let run_dir = dir.path().join(case.to_string());
        std::fs::create_dir_all(&run_dir).unwrap();
        let sink = CheckpointSink {
            dir: Some(run_dir),
            config_hash: "test".into(),
        };
        let out = train(&mut net, &data, &cfg, &sink).unwrap();
        let epochs = out.history.records.len();
        let best = out.history.best_epoch;
        let consumed = &seq[..epochs];
        let expected_best = earliest_max(consumed);
        let expected_epochs = max_epochs.min(expected_best + PATIENCE + 1);
        let mut fresh = ScriptedNet::new(vec![], 2);
        let meta = load_checkpoint(&mut fresh, out.checkpoint.as_ref().unwrap()).unwrap();
        let ok = epochs == expected_epochs
            && epochs == oracle_epochs(&seq, max_epochs, PATIENCE)
            && best == expected_best
            && net.tag() == best
            && meta.epoch == best
            && fresh.tag() == best;
        if out.history.stopped_early {
            stopped += 1;
        }
        if !ok {
            failures.push(format!("case {case}: trained {epochs} (want {expected_epochs}), best {best}"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{STOPPING_SEQUENCES} sequences ({stopped} stopped early), epochs and checkpoints match")
        } else {
            failures.join("; ")
        },
    )
}

// ------------------------------------------------------------------ data

fn expected_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

fn membership(split: &SplitManifest, s: Split) -> BTreeSet<String> {
    split.split(s).iter().map(|e| e.path.clone()).collect()
}

fn criterion_split() -> Verdict {
    let replica;
    let (root, source) = match std::env::var_os("MRIBENCH_DATASET_ROOT") {
        Some(r) => (PathBuf::from(r), "dataset"),
        None => {
            replica = tempfile::tempdir().unwrap();
            write_png_tree(replica.path(), &CORPUS);
            (replica.path().to_path_buf(), "replica tree")
        }
    };
    let manifest = match scan_dataset(&root) {
        Ok(m) => m,
        Err(e) => return Fail(format!("scan of {} failed: {e}", root.display())),
    };
    let mut problems = Vec::new();
    if manifest.len() != CORPUS_TOTAL {
        problems.push(format!("scan found {} images", manifest.len()));
    }
    let split = stratified_split(&manifest, SplitRatios::default(), 42).unwrap();
    for (class, n) in CORPUS {
        let got = (
            split.counts(Split::Train)[class.id()],
            split.counts(Split::Val)[class.id()],
            split.counts(Split::Test)[class.id()],
        );
        if got != expected_sizes(n) {
            problems.push(format!("{class}: {got:?} != {:?}", expected_sizes(n)));
        }
    }
    // The two example rows quoted for the corpus.
    if expected_sizes(2000) != (1600, 200, 200) || expected_sizes(1621) != (1296, 162, 163) {
        problems.push("size oracle disagrees with the quoted rows".into());
    }
    let all: BTreeSet<String> = manifest.entries.iter().map(|e| e.path.clone()).collect();
    let parts = Split::ALL.map(|s| membership(&split, s));
    let union: BTreeSet<String> = parts.iter().flatten().cloned().collect();
    let sum: usize = parts.iter().map(BTreeSet::len).sum();
    if union != all || sum != all.len() {
        problems.push("splits are not a partition of the scan".into());
    }
    let again = stratified_split(&manifest, SplitRatios::default(), 42).unwrap();
    if again != split {
        problems.push("same seed gave a different split".into());
    }
    let other = stratified_split(&manifest, SplitRatios::default(), 43).unwrap();
    if Split::ALL.iter().any(|&s| other.counts(s) != split.counts(s)) {
        problems.push("other seed changed the counts".into());
    }
    if membership(&other, Split::Test) == parts[2] {
        problems.push("other seed kept the same test membership".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{source}: {} images, per-class floor/floor/remainder sizes, partition and determinism hold",
                manifest.len()
            )
        } else {
            format!("{source}: {}", problems.join("; "))
        },
    )
}

// --------------------------------------------------------------- augment

fn criterion_augmentation() -> Verdict {
    // Distinct corners identify which flips the train pipeline applied.
    let img = RgbImage::from_fn(2, 2, |x, y| Rgb([(x * 100 + y * 10) as u8, 0, 0]));
    let cfg = PreprocessConfig {
        rotation_degrees: 0.0,
        target_size: 2,
        mean: [0.0; 3],
        std: [1.0; 3],
        ..PreprocessConfig::default()
    };
    let train_p = build_train_pipeline(&cfg).unwrap();
    let (mut h, mut v) = (0usize, 0usize);
    let p = Path::new("x");
    for i in 0..FLIP_DRAWS {
        let out = train_p.apply_seeded(img.clone(), 7, 0, i, p).unwrap().data;
        // Red channel layout: [(0,0), (1,0), (0,1), (1,1)] as (x, y).
        let top_left = (out[0] * 255.0).round() as u32;
        if top_left / 100 == 1 {
            h += 1;
        }
        if (top_left % 100) / 10 == 1 {
            v += 1;
        }
    }
    let (hf, vf) = (h as f64 / FLIP_DRAWS as f64, v as f64 / FLIP_DRAWS as f64);
    let in_band = |f: f64| (FLIP_BAND.0..=FLIP_BAND.1).contains(&f);

    let default = PreprocessConfig::default();
    let train_p = build_train_pipeline(&default).unwrap();
    let eval_p = build_eval_pipeline(&default).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut shapes_ok = true;
    let mut deterministic = true;
    for (w, hgt) in [(224, 224), (512, 512), (17, 300), (1, 1), (640, 480)] {
        let img = RgbImage::from_fn(w, hgt, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, rng.random()]));
        let a = train_p.apply_seeded(img.clone(), 1, 0, 0, p).unwrap();
        let b = eval_p.apply_seeded(img.clone(), 1, 0, 0, p).unwrap();
        let c = eval_p.apply_seeded(img, 99, 5, 3, p).unwrap();
        shapes_ok &= a.shape() == [3, 224, 224] && b.shape() == [3, 224, 224];
        let bits = |x: &[f32]| x.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        deterministic &= bits(&b.data) == bits(&c.data);
    }
    check(
        in_band(hf) && in_band(vf) && shapes_ok && deterministic,
        format!(
            "flip frequency h {hf:.4} v {vf:.4} over {FLIP_DRAWS} draws, shapes 3x224x224: {shapes_ok}, eval deterministic: {deterministic}"
        ),
    )
}

// ------------------------------------------------------------------- zoo

fn random_batch(n: usize, size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 3 * size * size).map(|_| rng.random_range(-2.0..2.0f32)).collect();
    Tensor::from_vec(&[n, 3, size, size], data).unwrap()
}

fn one_step(model: &mut dyn Network, size: usize) {
    let x = random_batch(4, size, 11);
    zero_grad(model);
    let logits = model.forward(x, &mut Ctx::new(Mode::Train, ChaCha8Rng::seed_from_u64(3))).unwrap();
    let (_, grad) = cross_entropy(&logits, &[0, 1, 2, 3]).unwrap();
    model.backward(grad).unwrap();
    Optimizer::new(OptimizerKind::Adam).step(model, 1e-3);
}

fn changed(before: &[(String, Tensor)], after: &[(String, Tensor)]) -> HashMap<String, bool> {
    before
        .iter()
        .zip(after)
        .map(|((name, a), (_, b))| (name.clone(), a.data() != b.data()))
        .collect()
}

fn group(name: &str) -> String {
    name.split('.').take(2).collect::<Vec<_>>().join(".")
}

fn criterion_freeze_audit() -> Verdict {
    let size = 64;
    let mut problems = Vec::new();
    let mut heads = Vec::new();
    for id in BackboneId::ALL {
        let mut model = build_transfer_baseline(id, 4, &WeightSource::Random, 0).unwrap().with_input_size(size);
        let (_, trainable) = count_parameters(&model);
        heads.push(format!("{id} {trainable}"));
        if trainable != id.feature_width() * 4 + 4 {
            problems.push(format!("{id} trainable {trainable}"));
        }
        let before = state_dict(&model);
        one_step(&mut model, size);
        let after = state_dict(&model);
        drop(model);
        for (name, moved) in changed(&before, &after) {
            if name.starts_with("head.") != moved {
                problems.push(format!("{id}: {name} {}", if moved { "moved" } else { "did not move" }));
            }
        }
    }
    let resnet_head = {
        let m = build_transfer_baseline(BackboneId::Resnet18, 4, &WeightSource::Random, 0).unwrap();
        count_parameters(m.head()).0
    };
    if resnet_head != 512 * 4 + 4 {
        problems.push(format!("resnet18 head {resnet_head}"));
    }

    let mut bt = build_mobilenet_bt(4, Some(mribench_core::nn::ActivationKind::Relu), &WeightSource::Random, 0)
        .unwrap()
        .with_input_size(size);
    let bt_head = count_parameters(bt.head()).0;
    let (total, trainable) = count_parameters(&bt);
    if bt_head != 1280 * 1000 + 1000 + 1000 * 4 + 4 || trainable != total {
        problems.push(format!("MobileNet-BT head {bt_head}, trainable {trainable}/{total}"));
    }
    let mut param_names = BTreeSet::new();
    bt.visit("", &mut |name, slot| {
        if let Slot::Param(_) = slot {
            param_names.insert(name.to_string());
        }
    });
    let before = state_dict(&bt);
    one_step(&mut bt, size);
    let moved = changed(&before, &state_dict(&bt));
    let mut groups: HashMap<String, bool> = HashMap::new();
    for name in &param_names {
        *groups.entry(group(name)).or_default() |= moved[name];
    }
    let still: Vec<&String> = groups.iter().filter(|(_, m)| !**m).map(|(g, _)| g).collect();
    if !still.is_empty() {
        problems.push(format!("MobileNet-BT groups unchanged: {still:?}"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "frozen backbones unchanged, trainable heads [{}], resnet18 head {resnet_head}, MobileNet-BT head {bt_head}, {} groups all moved",
                heads.join(", "),
                groups.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn head_loss(head: &mut Sequential, x: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let logits = head.forward(x.clone(), &mut Ctx::new(Mode::Train, ChaCha8Rng::seed_from_u64(9))).unwrap();
    cross_entropy(&logits, labels).unwrap()
}

fn with_value<R>(head: &mut Sequential, name: &str, i: usize, f: impl FnOnce(&mut f32) -> R) -> R {
    let mut f = Some(f);
    let mut out = None;
    head.visit("head", &mut |n, mut slot| {
        if n == name {
            out = Some((f.take().unwrap())(&mut slot.tensor_mut().data_mut()[i]));
        }
    });
    out.expect("named slot")
}

fn criterion_gradient_check() -> Verdict {
    let mut model =
        build_mobilenet_bt(4, Some(mribench_core::nn::ActivationKind::Relu), &WeightSource::Random, 5).unwrap();
    let head = model.head_mut();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::from_vec(&[4, 1280], (0..4 * 1280).map(|_| rng.random_range(0.0..3.0f32)).collect()).unwrap();
    let labels = [0, 1, 2, 3];

    zero_grad(head);
    let logits = head.forward(x.clone(), &mut Ctx::new(Mode::Train, ChaCha8Rng::seed_from_u64(9))).unwrap();
    let (_, g) = cross_entropy(&logits, &labels).unwrap();
    head.backward(g).unwrap();
    let mut grads: HashMap<String, Vec<f32>> = HashMap::new();
    head.visit("head", &mut |n, slot| {
        if let Slot::Param(p) = slot {
            grads.insert(n.to_string(), p.grad().to_vec());
        }
    });

    let eps = 1e-2f32;
    let mut report = Vec::new();
    let mut worst: f64 = 0.0;
    let mut kinks = 0;
    for name in ["head.4.weight", "head.4.bias", "head.1.weight", "head.1.bias"] {
        let g = &grads[name];
        // Coordinates with the largest analytic gradient plus random ones.
        let mut idx: Vec<usize> = (0..g.len()).collect();
        idx.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        let mut picks: Vec<usize> = idx[..16.min(g.len())].to_vec();
        picks.extend((0..16).map(|_| rng.random_range(0..g.len())));
        let (mut num, mut den) = (0.0f64, 0.0f64);
        let base = head_loss(head, &x, &labels).0;
        for &i in &picks {
            let orig = with_value(head, name, i, |v| *v);
            with_value(head, name, i, |v| *v = orig + eps);
            let up = head_loss(head, &x, &labels).0;
            with_value(head, name, i, |v| *v = orig - eps);
            let down = head_loss(head, &x, &labels).0;
            with_value(head, name, i, |v| *v = orig);
            let fd = (up - down) / (2.0 * eps as f64);
            // One-sided slopes that disagree mean the interval straddles a
            // ReLU kink, where the loss is not differentiable.
            let (fwd, bwd) = ((up - base) / eps as f64, (base - down) / eps as f64);
            if (fwd - bwd).abs() > 0.1 * fd.abs().max(1e-4) {
                kinks += 1;
                continue;
            }
            num += (fd - g[i] as f64).powi(2);
            den += (g[i] as f64).powi(2).max(fd.powi(2));
        }
        let rel = (num / den).sqrt();
        worst = worst.max(rel);
        report.push(format!("{name} {rel:.1e}"));
    }
    check(worst < GRAD_REL_TOL, format!(
            "relative error on 4-sample batch: {} ({kinks} coordinates at a kink skipped)",
            report.join(", ")
        ))
}

// ----------------------------------------------------------- end to end

fn criterion_overfit() -> Verdict {
    let start = Instant::now();
    let source = color_source(OVERFIT_IMAGES / 4, 64, 21);
    let pre = PreprocessConfig::default();
    let train_p = build_train_pipeline(&pre).unwrap();
    let eval_p = build_eval_pipeline(&pre).unwrap();
    let mut model =
        build_mobilenet_bt(4, Some(mribench_core::nn::ActivationKind::Relu), &WeightSource::Random, 42).unwrap();
    let initial = evaluate(&mut model, &source, &eval_p, 8, "").unwrap().avg_loss;
    let ln4 = 4f64.ln();
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: OVERFIT_EPOCHS,
        patience: OVERFIT_EPOCHS,
        ..TrainConfig::default()
    };
    let data = TrainData {
        train: &source,
        val: &source,
        train_pipeline: &train_p,
        eval_pipeline: &eval_p,
    };
    let out = match train(&mut model, &data, &cfg, &CheckpointSink::default()) {
        Ok(o) => o,
        Err(e) => return Fail(format!("training failed: {e}")),
    };
    let reached = out.history.records.iter().find(|r| r.train_acc >= OVERFIT_TARGET).map(|r| r.epoch);
    let best_train = out.history.records.iter().map(|r| r.train_acc).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let initial_ok = (0.5 * ln4..=2.0 * ln4).contains(&initial);
    check(
        reached.is_some() && elapsed < OVERFIT_BUDGET && initial_ok,
        format!(
            "initial loss {initial:.4} in [{:.4}, {:.4}]: {initial_ok}; train acc >= {OVERFIT_TARGET} at epoch {}, best {best_train:.4}; {elapsed:.0?}",
            0.5 * ln4,
            2.0 * ln4,
            reached.map_or("never".to_string(), |e| e.to_string()),
        ),
    )
}

fn criterion_extended() -> Verdict {
    if std::env::var("MRIBENCH_EXTENDED").ok().as_deref() != Some("1") {
        return Skip("set MRIBENCH_EXTENDED=1 with MRIBENCH_DATASET_ROOT and MRIBENCH_WEIGHTS_DIR".into());
    }
    let Some(root) = std::env::var_os("MRIBENCH_DATASET_ROOT") else {
        return Fail("MRIBENCH_DATASET_ROOT is not set".into());
    };
    let manifest = match scan_dataset(Path::new(&root)) {
        Ok(m) => m,
        Err(e) => return Fail(e.to_string()),
    };
    let split = stratified_split(&manifest, SplitRatios::default(), 42).unwrap();
    let pre = PreprocessConfig::default();
    let train_p = build_train_pipeline(&pre).unwrap();
    let eval_p = build_eval_pipeline(&pre).unwrap();
    let train_src = FileSource::from_split(&split, Split::Train);
    let val_src = FileSource::from_split(&split, Split::Val);
    let test_src = FileSource::from_split(&split, Split::Test);
    let weights = WeightSource::Pretrained(WeightsStore::from_env());
    let cfg = TrainConfig::default();
    let mut acc: HashMap<ModelKind, f64> = HashMap::new();
    for kind in ModelKind::ALL {
        let spec = ModelSpec::for_kind(kind, Some(mribench_core::nn::ActivationKind::Relu));
        let mut model = match build_model(&spec, &weights, cfg.seed) {
            Ok(m) => m,
            Err(e) => return Fail(format!("{kind}: {e}")),
        };
        let data = TrainData {
            train: &train_src,
            val: &val_src,
            train_pipeline: &train_p,
            eval_pipeline: &eval_p,
        };
        if let Err(e) = train(&mut model, &data, &cfg, &CheckpointSink::default()) {
            return Fail(format!("{kind}: {e}"));
        }
        let p = predict(&mut model, &test_src, &eval_p, cfg.batch_size).unwrap();
        let report = MetricsReport::from_predictions(kind.id(), "", &p.y_true, &p.probs).unwrap();
        acc.insert(kind, report.accuracy);
    }
    let bt = acc[&ModelKind::MobilenetBt];
    let base = |id| acc[&ModelKind::Baseline(id)];
    let ordered = base(BackboneId::MobilenetV2) < base(BackboneId::Resnet18)
        && base(BackboneId::Resnet18) < base(BackboneId::EfficientnetB0)
        && base(BackboneId::EfficientnetB0) < base(BackboneId::Vgg16);
    let gap = bt - base(BackboneId::MobilenetV2);
    let mut kinds: Vec<_> = acc.iter().map(|(k, a)| format!("{k} {a:.4}")).collect();
    kinds.sort();
    check(
        bt >= EXTENDED_MIN_ACC && gap >= EXTENDED_MIN_GAP && ordered,
        format!("test accuracy {}; gap {gap:.4}; baseline ordering reproduced: {ordered}", kinds.join(", ")),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("metrics oracle equivalence", criterion_metrics_oracle),
        ("weighted recall equals accuracy", criterion_weighted_recall_identity),
        ("lr schedule exactness", criterion_lr_schedule),
        ("early stopping tightness", criterion_early_stopping),
        ("split properties", criterion_split),
        ("augmentation contract", criterion_augmentation),
        ("freeze audit and head sizes", criterion_freeze_audit),
        ("head gradient check", criterion_gradient_check),
        ("overfit smoke test", criterion_overfit),
        ("extended full-protocol run", criterion_extended),
    ];
    let only: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {n:>2} {tag} {name}: {detail} [{secs:.1}s]");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
