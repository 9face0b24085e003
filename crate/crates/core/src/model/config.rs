use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acoustic model hyperparameters. `paper_parity` mirrors the published
/// setup; `desk` is the small profile everything here is verified on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub attention_heads: usize,
    pub ffn_filter: usize,
    /// Kernel width of the transformer conv feed-forward sublayer.
    pub conv_kernel: usize,
    pub mel_dim: usize,
    pub phoneme_vocab_size: usize,
    pub speaker_count: usize,
    /// Channels of the two-layer conv stacks used by every predictor head.
    pub predictor_conv_channels: usize,
    pub predictor_kernel: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn paper_parity() -> Self {
        ModelConfig {
            hidden_dim: 256,
            encoder_blocks: 4,
            decoder_blocks: 4,
            attention_heads: 2,
            ffn_filter: 1024,
            conv_kernel: 9,
            mel_dim: 80,
            phoneme_vocab_size: 0,
            speaker_count: 0,
            predictor_conv_channels: 256,
            predictor_kernel: 3,
            dropout: 0.1,
        }
    }

    pub fn desk() -> Self {
        ModelConfig {
            hidden_dim: 32,
            encoder_blocks: 2,
            decoder_blocks: 2,
            attention_heads: 2,
            ffn_filter: 64,
            conv_kernel: 3,
            mel_dim: 80,
            phoneme_vocab_size: 0,
            speaker_count: 0,
            predictor_conv_channels: 32,
            predictor_kernel: 3,
            dropout: 0.1,
        }
    }

    /// Tiny profile for gradient checking; hidden stays >= 16 so the 2-head
    /// default is still honored elsewhere, but here heads drop to 2 of 8.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden_dim: 8,
            encoder_blocks: 1,
            decoder_blocks: 1,
            attention_heads: 2,
            ffn_filter: 8,
            conv_kernel: 3,
            mel_dim: 80,
            phoneme_vocab_size: 0,
            speaker_count: 0,
            predictor_conv_channels: 8,
            predictor_kernel: 3,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.attention_heads == 0 {
            return Err(Error::Config("hidden_dim and heads must be positive".into()));
        }
        if self.hidden_dim < self.attention_heads || self.hidden_dim % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of attention_heads {}",
                self.hidden_dim, self.attention_heads
            )));
        }
        if self.conv_kernel % 2 == 0 || self.predictor_kernel % 2 == 0 {
            return Err(Error::Config("conv kernels must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0,1), got {}",
                self.dropout
            )));
        }
        if self.encoder_blocks == 0 || self.decoder_blocks == 0 {
            return Err(Error::Config("need at least one block per side".into()));
        }
        Ok(())
    }
}

/// Inference-time controls: the FP intensity threshold and speaker.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Positions with s0 <= fp_threshold receive an FP; larger T inserts
    /// more FPs.
    pub fp_threshold: f64,
    pub fp_enabled: bool,
    pub speaker: String,
}

impl SynthesisConfig {
    pub fn new(speaker: &str) -> Self {
        SynthesisConfig {
            fp_threshold: 0.5,
            fp_enabled: true,
            speaker: speaker.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fp_threshold) {
            return Err(Error::Config(format!(
                "fp_threshold must lie in [0,1], got {}",
                self.fp_threshold
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper_parity().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn bad_heads_rejected() {
        let mut c = ModelConfig::desk();
        c.attention_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn even_kernel_rejected() {
        let mut c = ModelConfig::desk();
        c.conv_kernel = 4;
        assert!(c.validate().is_err());
    }
}
