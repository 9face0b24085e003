//! The acoustic model: configuration, vocabulary, parameter construction,
//! layer blocks, and the end-to-end forward passes.

pub mod acoustic;
pub mod config;
pub mod layers;
pub mod params;
pub mod vocab;

pub use acoustic::{
    decide_fp_tags, frames_from_log, log_duration_target, moe_combine, AcousticModel, LossBundle,
    LossSelect, PitchStats, StageRecord, SynthesisOutput, TrainForward, EXPERT_PREFIXES,
};
pub use config::{ModelConfig, SynthesisConfig};
pub use vocab::{Vocab, BOS_ID, UH_ID, UM_ID};
