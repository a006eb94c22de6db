//! Layer-wise adaptive ensemble tuning for a desk-scale transformer.
//!
//! The pipeline probes every layer of a layered sequence model with one
//! shared classifier, selects the statistically best layers via dynamic
//! standard-deviation margins, fine-tunes only those layers plus the shared
//! head, and predicts by majority vote over the selected layers.
//!
//! Modules follow the pipeline stages:
//!
//! * [`numerics`] — tensors, kernels, and the recorded-graph backward pass.
//! * [`model`] — byte-level tokenizer and the decoder-only transformer.
//! * [`datakit`] — JSONL datasets, prompt formatting, splits, synthetic tasks.
//! * [`probe`] — shared-classifier training and per-layer metrics.
//! * [`selection`] — margin-based best-layer selection.
//! * [`finetune`] — selective fine-tuning with gradient routing.
//! * [`ensemble`] — majority-vote prediction and the error-bound diagnostic.
//! * [`evalmetrics`] — accuracy, F1, MCC, RMSE.
//! * [`harness`] — configuration, checkpoints, reports, and orchestration.

pub mod datakit;
pub mod ensemble;
pub mod error;
pub mod evalmetrics;
pub mod finetune;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod probe;
pub mod seeds;
pub mod selection;

pub use error::{Error, Result};
pub use model::{LayeredModel, ModelConfig, Strategy};
pub use numerics::{Tape, Tensor};
pub use probe::{LayerMetricsTable, ProbeClassifier};
pub use selection::{SelectionConfig, SelectionResult, SelectionStrategy};
