//! Dataset discovery, stratified splitting and the split manifest format.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const NUM_CLASSES: usize = 4;

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// Tumor class. Ids follow the alphabetical order of the class names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Glioma = 0,
    Meningioma = 1,
    #[serde(rename = "notumor")]
    NoTumor = 2,
    Pituitary = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Glioma,
        ClassLabel::Meningioma,
        ClassLabel::NoTumor,
        ClassLabel::Pituitary,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Glioma => "glioma",
            ClassLabel::Meningioma => "meningioma",
            ClassLabel::NoTumor => "notumor",
            ClassLabel::Pituitary => "pituitary",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown class name {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown split name {s:?}")))
    }
}

/// One labeled image. `path` is relative to the dataset root and always uses
/// `/` as separator so manifests are portable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ManifestEntry {
    pub path: String,
    pub label: ClassLabel,
}

pub type ClassCounts = [usize; NUM_CLASSES];

pub fn count_classes<'a>(entries: impl IntoIterator<Item = &'a ManifestEntry>) -> ClassCounts {
    let mut counts = [0; NUM_CLASSES];
    for e in entries {
        counts[e.label.id()] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub class_counts: ClassCounts,
    /// Files that looked like images but could not be read, plus empty-class notices.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn from_entries(root: impl Into<PathBuf>, mut entries: Vec<ManifestEntry>) -> Self {
        entries.sort();
        let class_counts = count_classes(&entries);
        DatasetManifest {
            root: root.into(),
            entries,
            class_counts,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn is_class_dir(dir: &Path) -> bool {
    ClassLabel::ALL.iter().any(|c| dir.join(c.name()).is_dir())
}

fn relative_string(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Lists every image below `root`.
///
/// `root` either holds one directory per class, or holds several such trees
/// (the public corpus ships `Training/` and `Testing/`), in which case all
/// trees are pooled. Only the image header is read here; files whose header
/// cannot be parsed are skipped and reported in `warnings`.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Config(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let trees: Vec<PathBuf> = if is_class_dir(root) {
        vec![root.to_path_buf()]
    } else {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && is_class_dir(p))
            .collect();
        subdirs.sort();
        subdirs
    };
    if trees.is_empty() {
        return Err(Error::Config(format!(
            "no class directories ({}) found under {}",
            ClassLabel::ALL.map(|c| c.name()).join(", "),
            root.display()
        )));
    }

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for tree in &trees {
        for class in ClassLabel::ALL {
            let dir = tree.join(class.name());
            if !dir.is_dir() {
                return Err(Error::Config(format!(
                    "missing class directory {}",
                    dir.display()
                )));
            }
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && has_image_extension(p))
                .collect();
            files.sort();
            if files.is_empty() {
                warnings.push(format!("class directory {} is empty", dir.display()));
            }
            for file in files {
                let readable = image::ImageReader::open(&file)
                    .and_then(|r| r.with_guessed_format())
                    .map_err(|e| e.to_string())
                    .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()));
                match readable {
                    Ok(_) => entries.push(ManifestEntry {
                        path: relative_string(root, &file),
                        label: class,
                    }),
                    Err(msg) => warnings.push(format!("skipping {}: {msg}", file.display())),
                }
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let mut manifest = DatasetManifest::from_entries(root, entries);
    manifest.warnings = warnings;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!("split ratios out of range: {self:?}")));
        }
        if ((self.train + self.val + self.test) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// (train, val, test) sizes for a class of `n` images: floor, floor,
    /// remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs products like 0.1 * 30 = 2.9999999999999996.
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl SplitManifest {
    pub fn split(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self, split: Split) -> ClassCounts {
        count_classes(self.split(split))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }
}

pub const MIN_IMAGES_PER_CLASS: usize = 3;

/// Per-class seeded shuffle followed by floor/floor/remainder slicing.
pub fn stratified_split(
    manifest: &DatasetManifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitManifest> {
    ratios.validate()?;
    let mut split = SplitManifest {
        root: manifest.root.clone(),
        seed,
        ratios,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in ClassLabel::ALL {
        let mut members: Vec<ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| e.label == class)
            .cloned()
            .collect();
        if members.len() < MIN_IMAGES_PER_CLASS {
            return Err(Error::Data(format!(
                "class {class} has {} images; at least {MIN_IMAGES_PER_CLASS} are needed to populate train/val/test",
                members.len()
            )));
        }
        // Sort first so the result does not depend on the caller's entry order.
        members.sort();
        members.shuffle(&mut stream_rng(seed, Stream::Split, &[class.id() as u64]));
        let (n_train, n_val, _) = ratios.sizes(members.len());
        let test = members.split_off(n_train + n_val);
        let val = members.split_off(n_train);
        split.train.extend(members);
        split.val.extend(val);
        split.test.extend(test);
    }
    Ok(split)
}

/// Sidecar written next to the CSV. Holds what the three-column CSV cannot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSummary {
    pub root: PathBuf,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub total: usize,
    /// split name -> class name -> count
    pub counts: std::collections::BTreeMap<String, std::collections::BTreeMap<String, usize>>,
}

impl SplitSummary {
    pub fn of(split: &SplitManifest) -> Self {
        let counts = Split::ALL
            .iter()
            .map(|s| {
                let c = split.counts(*s);
                let per_class = ClassLabel::ALL
                    .iter()
                    .map(|l| (l.name().to_string(), c[l.id()]))
                    .collect();
                (s.name().to_string(), per_class)
            })
            .collect();
        SplitSummary {
            root: split.root.clone(),
            seed: split.seed,
            ratios: split.ratios,
            total: split.len(),
            counts,
        }
    }
}

pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the `path,label,split` CSV and its JSON summary sidecar.
pub fn save_manifest(split: &SplitManifest, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("cannot write {}: {e}", path.display()));
    writer.write_record(["path", "label", "split"]).map_err(csv_err)?;
    for s in Split::ALL {
        for entry in split.split(s) {
            writer
                .write_record([entry.path.as_str(), entry.label.name(), s.name()])
                .map_err(csv_err)?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;

    let summary_file = summary_path(path);
    let json = serde_json::to_string_pretty(&SplitSummary::of(split))
        .map_err(|e| Error::Runtime(e.to_string()))?;
    fs::write(&summary_file, json + "\n").map_err(|e| Error::io(&summary_file, e))
}

pub fn load_manifest(path: &Path) -> Result<SplitManifest> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Data(format!("{}: {other:?}", path.display())),
        })?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
        return Err(parse_err(1, format!("expected header path,label,split, got {header:?}")));
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, got {}", record.len())));
        }
        let entry_path = record[0].to_string();
        if entry_path.is_empty() {
            return Err(parse_err(line, "empty path".into()));
        }
        let label: ClassLabel = record[1]
            .parse()
            .map_err(|e: Error| parse_err(line, e.to_string()))?;
        let split: Split = record[2]
            .parse()
            .map_err(|e: Error| parse_err(line, e.to_string()))?;
        if !seen.insert(entry_path.clone()) {
            return Err(Error::Data(format!(
                "{}:{line}: path {entry_path} appears more than once",
                path.display()
            )));
        }
        let entry = ManifestEntry {
            path: entry_path,
            label,
        };
        match split {
            Split::Train => train.push(entry),
            Split::Val => val.push(entry),
            Split::Test => test.push(entry),
        }
    }

    let summary_file = summary_path(path);
    let text = fs::read_to_string(&summary_file).map_err(|e| Error::io(&summary_file, e))?;
    let summary: SplitSummary = serde_json::from_str(&text)
        .map_err(|e| parse_err(e.line(), format!("split summary: {e}")))?;
    let manifest = SplitManifest {
        root: summary.root.clone(),
        seed: summary.seed,
        ratios: summary.ratios,
        train,
        val,
        test,
    };
    if manifest.len() != summary.total {
        return Err(Error::Data(format!(
            "{} lists {} images but its summary records {}",
            path.display(),
            manifest.len(),
            summary.total
        )));
    }
    Ok(manifest)
}

/// 8-bit RGB pixels; grayscale inputs are replicated, alpha is dropped.
pub type ImagePixels = RgbImage;

pub fn load_image(path: &Path) -> Result<ImagePixels> {
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    Ok(img.to_rgb8())
}

/// Random access to labeled images, in a fixed order.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn label(&self, index: usize) -> ClassLabel;

    fn image(&self, index: usize) -> Result<ImagePixels>;

    /// Identifies the sample in diagnostics and provenance.
    fn provenance(&self, index: usize) -> PathBuf;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labels(&self) -> Vec<ClassLabel> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Images decoded from disk on demand.
pub struct FileSource {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl FileSource {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        FileSource {
            root: root.into(),
            entries,
        }
    }

    pub fn from_split(manifest: &SplitManifest, split: Split) -> Self {
        FileSource::new(&manifest.root, manifest.split(split).to_vec())
    }
}

impl SampleSource for FileSource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn label(&self, index: usize) -> ClassLabel {
        self.entries[index].label
    }

    fn image(&self, index: usize) -> Result<ImagePixels> {
        load_image(&self.provenance(index))
    }

    fn provenance(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].path)
    }
}

/// Images already in memory; used for synthetic data.
#[derive(Default)]
pub struct MemorySource {
    samples: Vec<(ImagePixels, ClassLabel)>,
}

impl MemorySource {
    pub fn new(samples: Vec<(ImagePixels, ClassLabel)>) -> Self {
        MemorySource { samples }
    }
}

impl SampleSource for MemorySource {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn label(&self, index: usize) -> ClassLabel {
        self.samples[index].1
    }

    fn image(&self, index: usize) -> Result<ImagePixels> {
        Ok(self.samples[index].0.clone())
    }

    fn provenance(&self, index: usize) -> PathBuf {
        PathBuf::from(format!("memory:{index}"))
    }
}
