//! Staged training: source model training, FP predictor adaptation with
//! weighted cross-entropy, rhythm adaptation (router + experts + pitch),
//! speaker adaptation, and checkpointing. One training run owns its model
//! exclusively; parameter updates are strictly sequential per step.

pub mod checkpoint;
pub mod loss;
pub mod stages;
pub mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, LoadedCheckpoint, FORMAT_VERSION,
};
pub use loss::{weighted_ce_loss, weighted_ce_mean};
pub use stages::{default_trainable, resolve_trainable, StageConfig, StageKind};
pub use trainer::{log_to_csv, run_stage, LogRow, StageData, TrainOutcome};
