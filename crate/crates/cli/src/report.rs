//! Evaluation reports: one JSON document plus a CSV table of the model rows.

use std::io::Write;

use ehrcnn::baselines::SuiteRow;
use ehrcnn::cohort::{CohortDataset, Split, SplitCounts};
use ehrcnn::metrics::MetricSet;
use ehrcnn::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "model,representation,accuracy,auroc,auprc,max_f1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTable {
    pub train: SplitCounts,
    pub val: SplitCounts,
    pub test: SplitCounts,
}

impl SplitTable {
    pub fn of(dataset: &CohortDataset) -> Self {
        SplitTable {
            train: dataset.counts(Split::Train),
            val: dataset.counts(Split::Val),
            test: dataset.counts(Split::Test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub representation: String,
    pub accuracy: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub max_f1: f64,
}

impl ModelResult {
    pub fn new(model: impl Into<String>, representation: impl Into<String>, m: MetricSet) -> Self {
        ModelResult {
            model: model.into(),
            representation: representation.into(),
            accuracy: m.accuracy,
            auroc: m.auroc,
            auprc: m.auprc,
            max_f1: m.max_f1,
        }
    }
}

impl From<SuiteRow> for ModelResult {
    fn from(r: SuiteRow) -> Self {
        ModelResult {
            model: r.classifier,
            representation: r.representation,
            accuracy: r.accuracy,
            auroc: r.auroc,
            auprc: r.auprc,
            max_f1: r.max_f1,
        }
    }
}

/// Test-split results of one run. Contains no timestamps, so identical runs
/// give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub holdoff_days: u32,
    pub counts: SplitTable,
    pub models: Vec<ModelResult>,
    pub config_fingerprint: String,
    pub toolkit_version: String,
}

impl EvalReport {
    pub fn write_json(&self, w: &mut impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut *w, self).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for m in &self.models {
            writeln!(w, "{},{},{},{},{},{}", m.model, m.representation, m.accuracy, m.auroc, m.auprc, m.max_f1)?;
        }
        Ok(())
    }
}
