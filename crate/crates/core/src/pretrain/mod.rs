//! Losses and the joint masked-language-model plus concept-prediction
//! training loop.

mod losses;
mod step;
mod trainer;

pub use losses::{ecp_loss, ecp_loss_with_logits, mlm_loss, mlm_loss_with_grad, LossValue};
pub use step::{batch_loss, frozen_filter, train_step, BatchLoss, DropoutSeed, StepMetrics};
pub use trainer::{
    pretrain, read_metrics_log, PretrainOutcome, Schedule, TrainConfig, Trainer, CHECKPOINT_DIR, METRICS_FILE,
};
