//! Preprocessing, file formats, experiment configuration and reports.

pub mod config;
pub mod experiment;
pub mod io;
pub mod preprocess;
pub mod report;

pub use config::{Arm, ExperimentConfig};
pub use experiment::{run_experiment, PipelineError, ReportBundle, Stage};
pub use io::{load_dataset, save_dataset};
pub use preprocess::{batch_normalize, preprocess, self_normalize, BatchNormStats, PreprocessError};
pub use report::emit_reports;
