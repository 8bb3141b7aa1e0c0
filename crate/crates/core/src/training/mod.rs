//! Optimisation loop, schedule and checkpoint selection.

mod optim;
mod schedule;
mod trainer;

pub use optim::Adam;
pub use schedule::{loss, loss_on_tape, warmup_schedule, LossKind, TrainConfig};
pub use trainer::{
    predict, predict_with_snapshots, select_channel, train, validation_scores, SampleSet, StepRecord,
    TrainHistory, TrainOutcome,
};

use std::path::Path;

use crate::model::ModelError;
use crate::numcore::NumError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("train and validation ranges must be non-empty and inside the data")]
    EmptySplit,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
