//! Loss, optimizers and the training loop.

mod loss;
mod optimizer;
mod train;

pub use loss::{accuracy, sparse_ce, PROB_FLOOR};
pub use optimizer::{optimizer_step, OptState, OptimizerKind};
pub use train::{
    evaluate, train, train_with_progress, EpochStats, Evaluation, TrainConfig, TrainReport, LR_RANGE,
    REPORT_HEADER,
};
