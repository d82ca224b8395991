//! Optimizer, schedules, the epoch loop and evaluation.

mod config;
mod optim;
mod trainer;

pub use config::TrainConfig;
pub use optim::{
    adam_step, EarlyStopper, PlateauScheduler, StopSignal, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use trainer::{
    batch_loss, evaluate, predict_dataset, train, train_datasets, EpochRecord, Evaluation,
    TrainHistory, EVAL_BATCH,
};
