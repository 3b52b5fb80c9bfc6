//! Small dense networks with exact gradients, the MINE-f estimator and the
//! information-loading classifier.

pub mod classifier;
pub mod mine;
pub mod mlp;
pub mod optim;
pub mod serialize;

pub use classifier::{
    evaluate_accuracy, predict, train_classifier, ClassifierModel, EpochStats, Prediction, TrainingConfig,
};
pub use mine::{estimate_mmi, minef_estimate, MineOptions, MmiOptions};
pub use mlp::{Activation, Gradients, Layer, Mlp};
pub use optim::{Optimizer, OptimizerKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InfonetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("no labelled customers")]
    NoLabels,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
