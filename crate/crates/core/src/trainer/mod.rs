//! Training loop: normalization, sample assembly, input noise, per-node MSE
//! and curriculum-driven dataset switching.

mod normalize;
mod report;
mod run;
mod sample;

use std::path::PathBuf;

pub use normalize::{compute_normalizer, Normalizer, RunningStats, STD_FLOOR};
pub use report::{EvalRecord, Record, StepRecord, SwitchEvent, TrainReport};
pub use run::{steps_for_epochs, train_run, LevelData, RunOptions, TrainConfig, TrainData, TrainOutcome};
pub use sample::{build_features, make_sample, step_loss, SampleSpec};

use crate::curriculum::PlanError;
use crate::eval::EvalError;
use crate::model::ModelError;
use crate::optim::OptimError;
use crate::store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid plan: {0}")]
    Plan(#[from] PlanError),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("optimizer error: {0}")]
    Optim(#[from] OptimError),
    #[error("evaluation error: {0}")]
    Eval(#[from] EvalError),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: u64, detail: String, checkpoint: Option<PathBuf> },
}
