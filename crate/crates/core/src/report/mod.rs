//! Run configuration, run records, the comparison table and curve plots.

pub mod config;
pub mod plot;
pub mod run;
pub mod table;

pub use config::{config_hash, RunConfig, WeightsChoice};
pub use plot::{plot_curves, Legend};
pub use run::{run_dir_name, RunLock, RunRecord};
pub use table::{ComparisonTable, TableRow};
