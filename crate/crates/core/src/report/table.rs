use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::zoo::ModelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model_id: String,
    pub avg_loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TableRow {
    pub fn from_report(r: &MetricsReport) -> Self {
        TableRow {
            model_id: r.model_id.clone(),
            avg_loss: r.avg_loss,
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        }
    }

    fn display_name(&self) -> &str {
        self.model_id
            .parse::<ModelKind>()
            .map(ModelKind::display_name)
            .unwrap_or(&self.model_id)
    }
}

/// One row per model, ascending by accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    rows: Vec<TableRow>,
}

pub const COLUMNS: [&str; 5] = ["Ave. Loss", "Accuracy", "Precision", "Recall", "F1"];

impl ComparisonTable {
    pub fn new(mut rows: Vec<TableRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("comparison needs at least one run".into()));
        }
        rows.sort_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then_with(|| a.model_id.cmp(&b.model_id)));
        Ok(ComparisonTable { rows })
    }

    pub fn rows(&self) -> &[TableRow] {
        &self.rows
    }

    /// Fixed-width text with every value at four decimals.
    pub fn render(&self) -> String {
        let name_width = self.rows.iter().map(|r| r.display_name().len()).chain([5]).max().unwrap_or(5);
        let mut out = format!("{:<name_width$}", "Model");
        for c in COLUMNS {
            out.push_str(&format!("  {c:>9}"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(name_width + COLUMNS.len() * 11));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<name_width$}", r.display_name()));
            for v in [r.avg_loss, r.accuracy, r.precision, r.recall, r.f1] {
                out.push_str(&format!("  {v:>9.4}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory writer");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
    }
}
