//! Self-supervised training of dispatch proxies.

mod dataset;
mod loss;
mod trainer;

pub use dataset::{build_dataset, Record, Split, TrainSet};
pub use loss::{sample_loss, LossParts};
pub use trainer::{batch_loss_grad, evaluate_gap, mean_loss, train, train_run, EpochLog, RunResult, RunSpec, TrainConfig, TrainError, TrainOutcome};
