//! Machine-readable run reports and prediction files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datakit::TaskMode;
use crate::error::{Error, Result};
use crate::finetune::TrainingTrace;
use crate::harness::config::ExperimentConfig;
use crate::probe::LayerMetricsTable;
use crate::selection::SelectionResult;

/// One vote in a prediction row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRow {
    pub layer: usize,
    pub class: String,
    pub probs: Vec<f64>,
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub index: usize,
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tie: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub votes: Option<Vec<VoteRow>>,
}

/// Test metrics; classification fills the first four fields, regression
/// fills `rmse`. All values rounded to six decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TestMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_micro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_macro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerAccuracy {
    pub layer: usize,
    pub accuracy: f64,
}

/// The estimated majority-vote error bound. `estimated` flags that the
/// average error is a validation-split estimate, not a true generalization
/// error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub avg_validation_error: f64,
    pub ensemble_size: usize,
    pub bound: f64,
    pub estimated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub trainable: usize,
    pub total: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub per_epoch_loss: Vec<f64>,
}

impl TrainingSummary {
    pub fn from_trace(trace: &TrainingTrace) -> Self {
        TrainingSummary {
            epochs: trace.epochs.len(),
            first_loss: trace.first_loss(),
            final_loss: trace.final_loss(),
            per_epoch_loss: trace.epochs.iter().map(|e| e.combined_loss).collect(),
        }
    }
}

/// Everything one pipeline run produces, reproducible from the persisted
/// checkpoint, dataset and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub task_mode: TaskMode,
    pub classes: Vec<String>,
    pub layer_metrics: LayerMetricsTable,
    pub selection: SelectionResult,
    pub training: TrainingSummary,
    pub test: TestMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_layer_test_accuracy: Option<Vec<LayerAccuracy>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_bound: Option<BoundEstimate>,
    pub params: ParamSummary,
}

/// Pretty-printed JSON plus a trailing newline; identical inputs produce
/// identical bytes.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json_bytes(value))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::InvalidArgument(format!("cannot parse {}: {e}", path.display()))
    })
}

/// Write prediction rows as JSONL.
pub fn write_predictions(rows: &[PredictionRow], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| Error::Io(e.into()))?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}
