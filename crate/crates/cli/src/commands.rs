use std::fs;
use std::path::{Path, PathBuf};

use mribench_core::augment::{build_eval_pipeline, build_train_pipeline};
use mribench_core::data::{SampleSource,
    load_manifest, save_manifest, scan_dataset, stratified_split, summary_path, FileSource, Split, SplitRatios,
    SplitSummary,
};
use mribench_core::metrics::evaluate as evaluate_model;
use mribench_core::report::run::{CONFIG_FILE, CURVES_FILE, METRICS_FILE};
use mribench_core::report::{plot_curves, run_dir_name, ComparisonTable, RunConfig, RunLock, RunRecord, TableRow};
use mribench_core::report::plot::legend_path;
use mribench_core::train::{read_curves, train as train_model, write_curves, CheckpointSink, TrainData};
use mribench_core::zoo::checkpoint::checkpoint_path;
use mribench_core::zoo::{build_model, load_checkpoint, Model, ModelSpec, WeightSource};
use mribench_core::{Error, ModelKind, Result};

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn prepare(root: &Path, seed: u64, out: &Path) -> Result<()> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let manifest = scan_dataset(&absolute(root)?)?;
    let split = stratified_split(&manifest, SplitRatios::default(), seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_manifest(&split, out)?;
    let summary = SplitSummary::of(&split);
    println!("{} images, seed {seed}", summary.total);
    for (name, counts) in &summary.counts {
        let parts: Vec<String> = counts.iter().map(|(c, n)| format!("{c} {n}")).collect();
        println!("  {name:<5}  {}", parts.join(", "));
    }
    println!("wrote {} and {}", out.display(), summary_path(out).display());
    Ok(())
}

fn build(kind: ModelKind, cfg: &RunConfig, weights: &WeightSource) -> Result<Model> {
    let spec = ModelSpec::for_kind(kind, cfg.head_activation);
    Ok(build_model(&spec, weights, cfg.train.seed)?.with_input_size(cfg.preprocess.target_size as usize))
}

pub fn train(model_id: &str, config: &Path) -> Result<()> {
    let kind: ModelKind = model_id.parse()?;
    let base = config.parent().unwrap_or(Path::new("."));
    let cfg = RunConfig::load(config)?.with_model(kind)?.resolve_paths(base)?;
    let canonical = cfg.canonical();
    let hash = cfg.hash();
    let dir = cfg.runs_dir.join(run_dir_name(kind.id(), &hash));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let _lock = RunLock::acquire(&dir)?;
    write(&dir.join(CONFIG_FILE), &canonical)?;

    let manifest = load_manifest(&cfg.manifest)?;
    let train_src = FileSource::from_split(&manifest, Split::Train);
    let val_src = FileSource::from_split(&manifest, Split::Val);
    let train_pipeline = build_train_pipeline(&cfg.preprocess)?;
    let eval_pipeline = build_eval_pipeline(&cfg.preprocess)?;
    let mut model = build(kind, &cfg, &cfg.weights.source())?;
    log::info!(
        "training {kind} on {} images (val {}) into {}",
        train_src.len(),
        val_src.len(),
        dir.display()
    );
    let data = TrainData {
        train: &train_src,
        val: &val_src,
        train_pipeline: &train_pipeline,
        eval_pipeline: &eval_pipeline,
    };
    let sink = CheckpointSink {
        dir: Some(dir.clone()),
        config_hash: hash.clone(),
    };
    let outcome = train_model(&mut model, &data, &cfg.train, &sink)?;
    write_curves(&outcome.history, &dir.join(CURVES_FILE))?;
    let record = RunRecord {
        model_id: kind.id().to_string(),
        config_hash: hash,
        config_file: CONFIG_FILE.to_string(),
        history_file: CURVES_FILE.to_string(),
        checkpoint: file_name(&checkpoint_path(&dir, kind.id())),
        best_epoch: outcome.history.best_epoch,
        epochs_trained: outcome.history.records.len(),
        stopped_early: outcome.history.stopped_early,
        optimizer: cfg.train.optimizer.name().to_string(),
        batch_size: cfg.train.batch_size,
        seed: cfg.train.seed,
        weights: cfg.weights.name().to_string(),
        metrics: None,
    };
    record.save(&dir)?;
    let best = outcome.history.best().expect("at least one epoch");
    println!(
        "{kind}: {} epochs, best epoch {} (val acc {:.4}){}",
        record.epochs_trained,
        record.best_epoch,
        best.val_acc,
        if record.stopped_early { ", stopped early" } else { "" }
    );
    println!("{}", dir.display());
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn evaluate(run: &Path) -> Result<()> {
    let mut record = RunRecord::load(run)?;
    let cfg = record.config(run)?;
    let kind: ModelKind = record.model_id.parse()?;
    let ckpt = record.checkpoint_path(run);
    if !ckpt.is_file() {
        return Err(Error::Checkpoint(format!("missing checkpoint {}", ckpt.display())));
    }
    // Every tensor comes from the checkpoint, so the initial weights do not matter.
    let mut model = build(kind, &cfg, &WeightSource::Random)?;
    let meta = load_checkpoint(&mut model, &ckpt)?;
    if meta.config_hash != record.config_hash {
        return Err(Error::Checkpoint(format!(
            "{} was trained under config {} but the run records {}",
            ckpt.display(),
            meta.config_hash,
            record.config_hash
        )));
    }
    let manifest = load_manifest(&cfg.manifest)?;
    let test_src = FileSource::from_split(&manifest, Split::Test);
    let pipeline = build_eval_pipeline(&cfg.preprocess)?;
    let report = evaluate_model(&mut model, &test_src, &pipeline, cfg.train.batch_size, &record.config_hash)?;
    write(&run.join(METRICS_FILE), &report.to_json())?;
    println!(
        "{kind}: test loss {:.4} accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} ({} images)",
        report.avg_loss,
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        test_src.len()
    );
    record.metrics = Some(report);
    record.save(run)
}

pub fn compare(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let record = RunRecord::load(run)?;
        let report = record.metrics.as_ref().ok_or_else(|| {
            Error::Data(format!(
                "{} has no test metrics; run `mribench evaluate --run {}` first",
                run.display(),
                run.display()
            ))
        })?;
        rows.push(TableRow::from_report(report));
    }
    let table = ComparisonTable::new(rows)?;
    print!("{}", table.render());
    write(out, &table.to_csv())?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn curves(run: &Path, out: Option<&Path>) -> Result<()> {
    let record = RunRecord::load(run)?;
    let csv_path = record.history_path(run);
    if !csv_path.is_file() {
        return Err(Error::Data(format!("missing curves file {}", csv_path.display())));
    }
    let records = read_curves(&csv_path)?;
    let out = out.unwrap_or(run);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let svg = out.join(format!("{}-curves.svg", record.model_id));
    let title = record
        .model_id
        .parse::<ModelKind>()
        .map(|k| k.display_name().to_string())
        .unwrap_or_else(|_| record.model_id.clone());
    let legend = plot_curves(&records, &format!("{title}: loss and accuracy"), &svg)?;
    let csv_copy = out.join(format!("{}-curves.csv", record.model_id));
    fs::copy(&csv_path, &csv_copy).map_err(|e| Error::io(&csv_copy, e))?;
    println!(
        "wrote {} ({} series, {} epochs), {} and {}",
        svg.display(),
        legend.series.len(),
        records.len(),
        legend_path(&svg).display(),
        csv_copy.display()
    );
    Ok(())
}
