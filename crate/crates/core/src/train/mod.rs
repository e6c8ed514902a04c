//! Optimisation, data splitting, training loop and evaluation.

pub mod adam;
pub mod split;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use split::{subject_folds, subject_kfold_split, Fold};
pub use trainer::{
    evaluate, predict_proba, train, train_from, EpochStats, Evaluation, Prediction, StopReason, TrainConfig,
    TrainOutcome,
};
