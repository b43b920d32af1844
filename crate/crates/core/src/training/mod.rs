//! Optimization of the emulator: loss, AdamW, rollouts and checkpoints.

mod checkpoint;
mod loss;
mod optim;
mod step;
mod trainer;

pub use checkpoint::{checkpoint_catalog, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use loss::latitude_weighted_mse;
pub use optim::{cosine_lr, AdamW, AdamWParams};
pub use step::{init_dates, train_mode, Emulator, Sample};
pub use trainer::{Best, EpochRecord, Progress, StepRecord, TrainConfig, TrainData, Trainer};
