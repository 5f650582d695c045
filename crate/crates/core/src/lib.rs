//! Brain-tumor MRI classification benchmark: dataset splitting, augmentation,
//! a CPU CNN engine with a small model zoo, training, metrics and reporting.

pub mod augment;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rng;
pub mod train;
pub mod zoo;

pub use augment::{build_eval_pipeline, build_train_pipeline, Pipeline, PreprocessConfig};
pub use data::{ClassLabel, FileSource, MemorySource, SampleSource, Split, SplitManifest, SplitRatios};
pub use error::{Error, ErrorKind, Result};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use train::{EpochRecord, TrainConfig, TrainingHistory};
pub use zoo::{BackboneId, Model, ModelKind, ModelSpec, Network};
