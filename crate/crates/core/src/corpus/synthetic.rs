//! Deterministic synthetic corpus generator: the verification substrate that
//! stands in for the unavailable podcast audio.
//!
//! Reading-style durations are right-tailed on [1,25]; spontaneous durations
//! cover [1,40] near-uniformly but are conditioned on a planted phoneme speed
//! class so duration models have learnable signal. FPs are inserted
//! preferentially after a designated trigger class. Mel frames come from a
//! fixed seeded embedding of (phoneme, pitch, speaker) plus small noise, and
//! the acoustic mapping is shared across seeds so models trained on one
//! generated corpus transfer to another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use super::fp::{BOS, UH_TOKEN, UM_TOKEN};
use super::records::{Corpus, Style, UtteranceRecord, MEL_DIM};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    /// Regular phoneme inventory size; symbols are "p00", "p01", ...
    pub alphabet_size: usize,
    pub utterances: usize,
    pub speakers: usize,
    /// Speaker names start at spk{speaker_base}.
    pub speaker_base: usize,
    pub style: Style,
    /// Utterance length bounds in phonemes, excluding the BOS sentinel.
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    /// FP insertion probability after a trigger-class phoneme.
    pub fp_rate_trigger: f64,
    /// FP insertion probability after any other position.
    pub fp_rate_other: f64,
    /// P(um | FP inserted); the remainder are uhs.
    pub um_fraction: f64,
    pub id_prefix: String,
}

/// Mined FP statistics put uhs ahead of ums roughly 2614:338.
pub const DEFAULT_UM_FRACTION: f64 = 338.0 / 2952.0;

impl GeneratorConfig {
    pub fn reading() -> Self {
        GeneratorConfig {
            alphabet_size: 32,
            utterances: 32,
            speakers: 2,
            speaker_base: 0,
            style: Style::Reading,
            min_phonemes: 6,
            max_phonemes: 12,
            fp_rate_trigger: 0.0,
            fp_rate_other: 0.0,
            um_fraction: DEFAULT_UM_FRACTION,
            id_prefix: "read".into(),
        }
    }

    pub fn spontaneous() -> Self {
        GeneratorConfig {
            alphabet_size: 32,
            utterances: 64,
            speakers: 2,
            speaker_base: 0,
            style: Style::Spontaneous,
            min_phonemes: 6,
            max_phonemes: 12,
            fp_rate_trigger: 0.35,
            fp_rate_other: 0.005,
            um_fraction: DEFAULT_UM_FRACTION,
            id_prefix: "spon".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("fp_rate_trigger", self.fp_rate_trigger),
            ("fp_rate_other", self.fp_rate_other),
            ("um_fraction", self.um_fraction),
        ] {
            if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must lie in [0,1], got {rate}"
                )));
            }
        }
        if self.alphabet_size < 6 || self.alphabet_size > 99 {
            return Err(Error::Config(format!(
                "alphabet_size must lie in [6,99], got {}",
                self.alphabet_size
            )));
        }
        if self.utterances == 0 || self.speakers == 0 {
            return Err(Error::Config(
                "utterances and speakers must be positive".into(),
            ));
        }
        if self.min_phonemes == 0 || self.min_phonemes > self.max_phonemes {
            return Err(Error::Config(format!(
                "phoneme bounds invalid: {}..{}",
                self.min_phonemes, self.max_phonemes
            )));
        }
        Ok(())
    }
}

/// Planted speed class of a symbol: spontaneous durations are drawn from the
/// class's range so the speed router has signal to learn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeedClass {
    Fast,
    Medium,
    Slow,
}

pub fn speed_class_of(symbol: &str) -> SpeedClass {
    if symbol == BOS {
        return SpeedClass::Fast;
    }
    if symbol == UH_TOKEN || symbol == UM_TOKEN {
        return SpeedClass::Slow;
    }
    match phoneme_id(symbol) {
        Some(id) => match id % 3 {
            0 => SpeedClass::Fast,
            1 => SpeedClass::Medium,
            _ => SpeedClass::Slow,
        },
        None => SpeedClass::Medium,
    }
}

/// The designated FP trigger class: every fourth regular phoneme.
pub fn is_fp_trigger(symbol: &str) -> bool {
    matches!(phoneme_id(symbol), Some(id) if id % 4 == 0)
}

fn phoneme_id(symbol: &str) -> Option<usize> {
    symbol.strip_prefix('p').and_then(|s| s.parse().ok())
}

fn fnv1a64(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

const MEL_UNIVERSE_SEED: u64 = 0x4d454c5f554e4956; // symbol embeddings
const PITCH_DIR_SEED: u64 = 0x504954434844_4952; // pitch direction
const SPEAKER_SEED: u64 = 0x53504541_4b455253; // speaker profiles

/// Fixed 80-dim mel embedding of a symbol, independent of the corpus seed.
pub fn symbol_mel_embedding(symbol: &str) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(MEL_UNIVERSE_SEED ^ fnv1a64(symbol));
    let dist = Normal::new(0.0f64, 0.35).unwrap();
    (0..MEL_DIM).map(|_| dist.sample(&mut rng) as f32).collect()
}

pub fn pitch_direction() -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(PITCH_DIR_SEED);
    let dist = Normal::new(0.0f64, 0.15).unwrap();
    (0..MEL_DIM).map(|_| dist.sample(&mut rng) as f32).collect()
}

/// Per-speaker acoustics: a mel offset plus the Gaussian the speaker's pitch
/// values are drawn from. Derived from the speaker name, not the corpus seed.
pub struct SpeakerProfile {
    pub mel_offset: Vec<f32>,
    pub pitch_mean: f64,
    pub pitch_std: f64,
}

pub fn speaker_profile(speaker: &str) -> SpeakerProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(SPEAKER_SEED ^ fnv1a64(speaker));
    let off = Normal::new(0.0f64, 0.2).unwrap();
    let mel_offset = (0..MEL_DIM).map(|_| off.sample(&mut rng) as f32).collect();
    let pitch_mean = Normal::new(0.0f64, 0.5).unwrap().sample(&mut rng);
    let pitch_std = rng.gen_range(0.3..0.8);
    SpeakerProfile {
        mel_offset,
        pitch_mean,
        pitch_std,
    }
}

const NOISE_SIGMA: f64 = 0.01;

fn sample_duration(rng: &mut ChaCha8Rng, style: Style, class: SpeedClass) -> u32 {
    match style {
        Style::Reading => {
            // Right-tailed, supported on [1,25].
            let g: f64 = Gamma::new(2.2, 2.5).unwrap().sample(rng);
            (g.round() as i64).clamp(1, 25) as u32
        }
        Style::Spontaneous => {
            // Class-conditional ranges tiling [1,40] near-uniformly.
            let (lo, hi) = match class {
                SpeedClass::Fast => (1, 13),
                SpeedClass::Medium => (14, 26),
                SpeedClass::Slow => (27, 40),
            };
            rng.gen_range(lo..=hi)
        }
    }
}

/// Deterministic given (config, seed): same inputs produce byte-identical
/// corpora.
pub fn generate_synthetic_corpus(cfg: &GeneratorConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = pitch_direction();
    let noise = Normal::new(0.0f64, NOISE_SIGMA).unwrap();

    let mut records = Vec::with_capacity(cfg.utterances);
    for u in 0..cfg.utterances {
        let speaker_idx = rng.gen_range(0..cfg.speakers);
        let speaker = format!("spk{}", cfg.speaker_base + speaker_idx);
        let profile = speaker_profile(&speaker);

        let n = rng.gen_range(cfg.min_phonemes..=cfg.max_phonemes);
        let mut symbols: Vec<String> = vec![BOS.to_string()];
        for _ in 0..n {
            symbols.push(format!("p{:02}", rng.gen_range(0..cfg.alphabet_size)));
        }

        // FP insertion pass: preferentially after trigger-class phonemes,
        // never directly after another FP token.
        let mut with_fp: Vec<String> = Vec::with_capacity(symbols.len() + 4);
        for sym in symbols {
            let rate = if is_fp_trigger(&sym) {
                cfg.fp_rate_trigger
            } else {
                cfg.fp_rate_other
            };
            with_fp.push(sym);
            if rate > 0.0 && rng.gen_range(0.0..1.0) < rate {
                let tok = if rng.gen_range(0.0..1.0) < cfg.um_fraction {
                    UM_TOKEN
                } else {
                    UH_TOKEN
                };
                with_fp.push(tok.to_string());
            }
        }

        let durations: Vec<u32> = with_fp
            .iter()
            .map(|s| sample_duration(&mut rng, cfg.style, speed_class_of(s)))
            .collect();
        let pitch_dist = Normal::new(profile.pitch_mean, profile.pitch_std).unwrap();
        let pitch: Vec<f32> = with_fp
            .iter()
            .map(|_| pitch_dist.sample(&mut rng) as f32)
            .collect();

        let total_frames: usize = durations.iter().map(|&d| d as usize).sum();
        let mut mel = Tensor::<f32>::zeros(&[total_frames, MEL_DIM]);
        let mut frame = 0usize;
        for (i, sym) in with_fp.iter().enumerate() {
            let emb = symbol_mel_embedding(sym);
            for _ in 0..durations[i] {
                let row = &mut mel.data_mut()[frame * MEL_DIM..(frame + 1) * MEL_DIM];
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = emb[j]
                        + pitch[i] * dir[j]
                        + profile.mel_offset[j]
                        + noise.sample(&mut rng) as f32;
                }
                frame += 1;
            }
        }

        records.push(UtteranceRecord {
            id: format!("{}{:05}", cfg.id_prefix, u),
            speaker,
            style: cfg.style,
            phonemes: with_fp,
            durations,
            pitch,
            mel: Some(mel),
        });
    }
    let corpus = Corpus { records };
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = GeneratorConfig::spontaneous();
        let a = generate_synthetic_corpus(&cfg, 42).unwrap();
        let b = generate_synthetic_corpus(&cfg, 42).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn different_seed_differs() {
        let cfg = GeneratorConfig::spontaneous();
        let a = generate_synthetic_corpus(&cfg, 42).unwrap();
        let b = generate_synthetic_corpus(&cfg, 43).unwrap();
        assert_ne!(a.records, b.records);
    }

    #[test]
    fn spontaneous_durations_have_heavy_tail() {
        let mut cfg = GeneratorConfig::spontaneous();
        cfg.utterances = 150;
        cfg.min_phonemes = 8;
        cfg.max_phonemes = 16;
        let corpus = generate_synthetic_corpus(&cfg, 1).unwrap();
        let durations: Vec<u32> = corpus
            .records
            .iter()
            .flat_map(|r| r.durations.iter().copied())
            .collect();
        assert!(durations.len() > 1000);
        let over25 = durations.iter().filter(|&&d| d > 25).count();
        assert!(
            over25 as f64 / durations.len() as f64 >= 0.3,
            "fraction over 25 = {}",
            over25 as f64 / durations.len() as f64
        );
    }

    #[test]
    fn reading_durations_stay_below_25() {
        let cfg = GeneratorConfig::reading();
        let corpus = generate_synthetic_corpus(&cfg, 1).unwrap();
        for r in &corpus.records {
            assert!(r.durations.iter().all(|&d| (1..=25).contains(&d)));
        }
    }

    #[test]
    fn fp_rate_zero_means_no_fp() {
        let mut cfg = GeneratorConfig::spontaneous();
        cfg.fp_rate_trigger = 0.0;
        cfg.fp_rate_other = 0.0;
        let corpus = generate_synthetic_corpus(&cfg, 5).unwrap();
        let (uh, um) = corpus.fp_counts();
        assert_eq!((uh, um), (0, 0));
    }

    #[test]
    fn fp_counts_scale_roughly_linearly_with_rate() {
        let mut low = GeneratorConfig::spontaneous();
        low.utterances = 200;
        low.fp_rate_trigger = 0.15;
        low.fp_rate_other = 0.0;
        let mut high = low.clone();
        high.fp_rate_trigger = 0.30;
        let (luh, lum) = generate_synthetic_corpus(&low, 9).unwrap().fp_counts();
        let (huh, hum) = generate_synthetic_corpus(&high, 9).unwrap().fp_counts();
        let (lo, hi) = ((luh + lum) as f64, (huh + hum) as f64);
        // Doubling the rate should double counts within 3 binomial sigmas.
        let sigma = (2.0 * lo).sqrt().max(1.0);
        assert!(
            (hi - 2.0 * lo).abs() <= 3.0 * 2.0f64.sqrt() * sigma,
            "lo={lo} hi={hi}"
        );
    }

    #[test]
    fn invalid_rate_is_config_error() {
        let mut cfg = GeneratorConfig::spontaneous();
        cfg.fp_rate_trigger = 1.5;
        assert!(matches!(
            generate_synthetic_corpus(&cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn records_pass_their_invariants() {
        let cfg = GeneratorConfig::spontaneous();
        let corpus = generate_synthetic_corpus(&cfg, 3).unwrap();
        corpus.validate().unwrap();
        for r in &corpus.records {
            assert_eq!(r.phonemes[0], BOS);
        }
    }
}
