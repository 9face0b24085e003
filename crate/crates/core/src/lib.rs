//! Spontaneous-style TTS adaptation at desk scale: a small non-autoregressive
//! acoustic model with a filled-pause predictor and a mixture-of-experts
//! duration predictor, the staged fine-tuning pipeline that adapts a
//! reading-style source model to spontaneous speech, and the dataset mining
//! that feeds it. Output is mel-spectrogram-like feature frames plus
//! predicted filled-pause tags and durations; there is no vocoder.

pub mod adaptation;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod util;
pub mod eval;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
