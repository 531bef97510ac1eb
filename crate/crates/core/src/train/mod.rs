//! Loss, optimizer, checkpoints and the training loop.

mod adam;
mod checkpoint;
mod config;
mod loss;
mod trainer;

pub use adam::{global_norm, Adam, StepOutcome};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{teacher_forcing_ratio, TrainConfig};
pub use loss::{batch_diagonal_mass, total_loss, LossBreakdown, LossConfig};
pub use trainer::{LogRecord, Trainer};
