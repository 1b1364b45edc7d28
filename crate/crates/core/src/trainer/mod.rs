//! Self-supervised joint training of both predictors.

mod dataset;
mod losses;
mod step;
pub mod synthetic;
mod train;

pub use dataset::{image_files, Dataset, SampleStream, TrainSample};
pub use losses::{
    batch_loss, loss_alpha_regularization, loss_distance, loss_reconstruction, loss_total, BatchLoss, LossValues,
    LossWeights,
};
pub use step::{evaluate_batch, forward_backward, Batch, StepResult};
pub use train::{read_log, train, train_on, write_log, LogRow, TrainConfig, TrainOutcome, LOG_HEADER};
