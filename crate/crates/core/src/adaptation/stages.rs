//! Stage definitions for staged adaptation: which parameters train, in what
//! order the stages may run, and the per-stage defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Source,
    Fp,
    Rhythm,
    Speaker,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Source => "source",
            StageKind::Fp => "fp",
            StageKind::Rhythm => "rhythm",
            StageKind::Speaker => "speaker",
        }
    }

    /// Stage that must already appear in checkpoint history before this one
    /// may run.
    pub fn prerequisite(self) -> Option<&'static str> {
        match self {
            StageKind::Source => None,
            _ => Some("source"),
        }
    }
}

/// One stage's training configuration. `trainable` holds name patterns: a
/// plain string is a prefix match, `*text*` matches any name containing
/// `text`. Everything not matched stays frozen for the stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: StageKind,
    pub steps: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Positive-class weight of the FP loss (FP stage only).
    pub sigma: f64,
    pub seed: u64,
    /// Fraction of steps spent in linear LR warmup (source stage only).
    pub warmup_fraction: f64,
    /// Speaker used to condition FP-stage forward passes (text-only pairs
    /// carry no speaker); defaults to the model's first speaker.
    pub fp_speaker: Option<String>,
    /// Speaker-stage target; defaults to the dominant corpus speaker.
    pub target_speaker: Option<String>,
    pub trainable: Vec<String>,
    pub log_every: u64,
}

impl StageConfig {
    /// Desk-scale defaults: steps 2000/400/400/200 mirror the published
    /// 100k/4k/4k/2k schedule at 1/50 scale for the heavy stage and 1/10 for
    /// the adaptations.
    pub fn defaults(stage: StageKind, seed: u64) -> Self {
        let (steps, learning_rate, warmup_fraction) = match stage {
            StageKind::Source => (2000, 1e-3, 0.1),
            StageKind::Fp => (400, 1e-4, 0.0),
            StageKind::Rhythm => (400, 1e-4, 0.0),
            StageKind::Speaker => (200, 1e-4, 0.0),
        };
        StageConfig {
            stage,
            steps,
            learning_rate,
            batch_size: 4,
            sigma: 5.0,
            seed,
            warmup_fraction,
            fp_speaker: None,
            target_speaker: None,
            trainable: default_trainable(stage, None),
            log_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=0.9).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 0.9]".into()));
        }
        if self.trainable.is_empty() {
            return Err(Error::Config("trainable pattern list is empty".into()));
        }
        Ok(())
    }

    /// Linear warmup to the configured rate, constant afterwards.
    pub fn lr_at(&self, step: u64) -> f64 {
        let warmup = (self.warmup_fraction * self.steps as f64).floor() as u64;
        if warmup == 0 || step > warmup {
            self.learning_rate
        } else {
            self.learning_rate * step as f64 / warmup as f64
        }
    }
}

/// Default trainable-parameter patterns per stage.
pub fn default_trainable(stage: StageKind, target_speaker: Option<&str>) -> Vec<String> {
    match stage {
        // Everything the source model owns; FP predictor, router, and
        // experts stay untouched.
        StageKind::Source => vec![
            "phoneme_embedding".into(),
            "speaker_embedding.".into(),
            "encoder.".into(),
            "decoder.".into(),
            "pitch_predictor.".into(),
            "duration_predictor.".into(),
            "pitch_proj.".into(),
            "mel_out".into(),
        ],
        // Only the FP predictor; the encoder stays frozen so the stage is
        // idempotent for every other head.
        StageKind::Fp => vec!["fp_predictor.".into()],
        // Router, experts, pitch predictor, and the FP embeddings (the only
        // stage whose losses reach them).
        StageKind::Rhythm => vec![
            "speed_router.".into(),
            "duration_expert.".into(),
            "pitch_predictor.".into(),
            "fp_embedding".into(),
        ],
        // Conditional layer-norm generators plus the target speaker's row.
        StageKind::Speaker => {
            let mut v = vec!["*.cln.*".to_string()];
            if let Some(t) = target_speaker {
                v.push(format!("speaker_embedding.{t}"));
            }
            v
        }
    }
}

pub fn pattern_matches(name: &str, pattern: &str) -> bool {
    if let Some(inner) = pattern.strip_prefix('*').and_then(|p| p.strip_suffix('*')) {
        name.contains(inner)
    } else {
        name.starts_with(pattern)
    }
}

/// Slots of every parameter matching at least one pattern. Errors when a
/// pattern matches nothing, which catches stale prefixes.
pub fn resolve_trainable<S: Scalar>(params: &ParamSet<S>, patterns: &[String]) -> Result<Vec<usize>> {
    let mut slots = Vec::new();
    for pattern in patterns {
        let mut hit = false;
        for (slot, p) in params.iter().enumerate() {
            if pattern_matches(&p.name, pattern) {
                hit = true;
                if !slots.contains(&slot) {
                    slots.push(slot);
                }
            }
        }
        if !hit {
            return Err(Error::Config(format!(
                "trainable pattern {pattern:?} matches no parameter"
            )));
        }
    }
    slots.sort_unstable();
    Ok(slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Vocab};

    #[test]
    fn warmup_schedule() {
        let mut cfg = StageConfig::defaults(StageKind::Source, 1);
        cfg.steps = 100;
        cfg.warmup_fraction = 0.1;
        cfg.learning_rate = 1.0;
        assert!((cfg.lr_at(1) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(10) - 1.0).abs() < 1e-12);
        assert!((cfg.lr_at(50) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn patterns_prefix_and_contains() {
        assert!(pattern_matches("encoder.block0.attn.wq", "encoder."));
        assert!(!pattern_matches("decoder.block0.attn.wq", "encoder."));
        assert!(pattern_matches("decoder.block1.ffn.cln.gamma_w", "*.cln.*"));
        assert!(!pattern_matches("fp_predictor.ln1_gamma", "*.cln.*"));
    }

    #[test]
    fn resolve_catches_stale_patterns() {
        let vocab = Vocab::build(["p00"]);
        let ps = crate::model::params::build_params::<f32>(
            &ModelConfig::tiny(),
            &vocab,
            &["s".to_string()],
            1,
        )
        .unwrap();
        assert!(resolve_trainable(&ps, &["nonexistent.".to_string()]).is_err());
        let slots = resolve_trainable(&ps, &["fp_predictor.".to_string()]).unwrap();
        assert_eq!(slots.len(), 10);
    }

    #[test]
    fn speaker_patterns_cover_cln_everywhere() {
        let vocab = Vocab::build(["p00"]);
        let ps = crate::model::params::build_params::<f32>(
            &ModelConfig::tiny(),
            &vocab,
            &["s".to_string()],
            1,
        )
        .unwrap();
        let patterns = default_trainable(StageKind::Speaker, Some("s"));
        let slots = resolve_trainable(&ps, &patterns).unwrap();
        // 2 blocks (1 enc + 1 dec) × 2 cln groups × 4 tensors + 1 speaker row.
        assert_eq!(slots.len(), 17);
    }
}
