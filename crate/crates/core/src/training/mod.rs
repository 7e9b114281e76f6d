//! Losses, optimizer, learning-rate schedule, the training loop and checkpoints.

mod adam;
pub mod checkpoint;
pub mod loss;
mod schedule;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use loss::{
    angle_loss, consistency_loss, orthogonality_loss, total_loss_on_tape, LossInputs, LossTerms, LossWeights,
};
pub use schedule::{lr_at_epoch, TrainConfig};
pub use trainer::{
    patch_gradient, record_patch_loss, train, PatchGradient, TrainState, Trainer, TrainingData, TrainingPatch,
};
