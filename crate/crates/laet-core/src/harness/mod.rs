//! Configuration, checkpointing, reporting, and pipeline orchestration.

pub mod checkpoint;
pub mod config;
pub mod pipeline;
pub mod report;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint};
pub use config::{DataSource, ExperimentConfig};
pub use pipeline::{compare_probe_strategies, run_pipeline, sweep_alpha_beta};
pub use report::{PredictionRow, RunReport};
