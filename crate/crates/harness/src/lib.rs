//! Experiment harness around `concord-core`: dataset ingestion, the
//! pretrain -> fine-tune -> attack pipeline, and result persistence as
//! CSV tables and SVG plots.

pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, DatasetKind, ExperimentConfig, Task};
pub use dataset::{DataError, Dataset, Split};
pub use pipeline::{run_pipeline, PipelineError, RunRecord};
