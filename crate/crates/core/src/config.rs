//! Flat key=value configuration: declared defaults, an optional config file,
//! then command-line overrides, in that order. Unknown keys are rejected and
//! every run writes the resolved snapshot beside its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::params::hex_string;

#[derive(Clone, Debug, Default)]
pub struct Resolver {
    values: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(defaults: &[(&str, &str)]) -> Self {
        Resolver {
            values: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn extend(&mut self, defaults: &[(&str, String)]) {
        for (k, v) in defaults {
            self.values.insert(k.to_string(), v.clone());
        }
    }

    fn set_known(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::Config(format!(
                "unknown config key {key:?} (from {origin})"
            )));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                column: 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            self.set_known(k.trim(), v.trim(), &path.display().to_string())?;
        }
        Ok(())
    }

    /// Applies `key=value` strings from the command line.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                Error::Config(format!("override {pair:?} is not of the form key=value"))
            })?;
            self.set_known(k.trim(), v.trim(), "command line")?;
        }
        Ok(())
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("key {key:?} not declared")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.str(key)?
            .parse()
            .map_err(|e| Error::Config(format!("{key}: {e}")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.str(key)?
            .parse()
            .map_err(|e| Error::Config(format!("{key}: {e}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.str(key)?
            .parse()
            .map_err(|e| Error::Config(format!("{key}: {e}")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.str(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!(
                "{key}: expected true/false, got {other:?}"
            ))),
        }
    }

    /// Sorted `key=value` lines; the file written beside every run's output.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn config_hash(&self) -> String {
        hex_string(&Sha256::digest(self.snapshot().as_bytes()))
    }
}

/// Model keys shared by training commands.
pub fn model_defaults() -> Vec<(&'static str, &'static str)> {
    vec![
        ("model.hidden_dim", "32"),
        ("model.encoder_blocks", "2"),
        ("model.decoder_blocks", "2"),
        ("model.attention_heads", "2"),
        ("model.ffn_filter", "64"),
        ("model.conv_kernel", "3"),
        ("model.mel_dim", "80"),
        ("model.predictor_conv_channels", "32"),
        ("model.predictor_kernel", "3"),
        ("model.dropout", "0.1"),
    ]
}

pub fn model_config_from(r: &Resolver) -> Result<crate::model::ModelConfig> {
    let cfg = crate::model::ModelConfig {
        hidden_dim: r.usize("model.hidden_dim")?,
        encoder_blocks: r.usize("model.encoder_blocks")?,
        decoder_blocks: r.usize("model.decoder_blocks")?,
        attention_heads: r.usize("model.attention_heads")?,
        ffn_filter: r.usize("model.ffn_filter")?,
        conv_kernel: r.usize("model.conv_kernel")?,
        mel_dim: r.usize("model.mel_dim")?,
        phoneme_vocab_size: 0,
        speaker_count: 0,
        predictor_conv_channels: r.usize("model.predictor_conv_channels")?,
        predictor_kernel: r.usize("model.predictor_kernel")?,
        dropout: r.f64("model.dropout")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Generator keys for corpus synthesis.
pub fn generator_defaults() -> Vec<(&'static str, &'static str)> {
    vec![
        ("gen.alphabet_size", "32"),
        ("gen.utterances", "32"),
        ("gen.speakers", "2"),
        ("gen.speaker_base", "0"),
        ("gen.style", "reading"),
        ("gen.min_phonemes", "6"),
        ("gen.max_phonemes", "12"),
        ("gen.fp_rate_trigger", "0.0"),
        ("gen.fp_rate_other", "0.0"),
        ("gen.um_fraction", "0.114498"),
        ("gen.id_prefix", "utt"),
    ]
}

pub fn generator_config_from(r: &Resolver) -> Result<crate::corpus::GeneratorConfig> {
    let style = match r.str("gen.style")? {
        "reading" => crate::corpus::Style::Reading,
        "spontaneous" => crate::corpus::Style::Spontaneous,
        other => {
            return Err(Error::Config(format!(
                "gen.style must be reading|spontaneous, got {other:?}"
            )))
        }
    };
    Ok(crate::corpus::GeneratorConfig {
        alphabet_size: r.usize("gen.alphabet_size")?,
        utterances: r.usize("gen.utterances")?,
        speakers: r.usize("gen.speakers")?,
        speaker_base: r.usize("gen.speaker_base")?,
        style,
        min_phonemes: r.usize("gen.min_phonemes")?,
        max_phonemes: r.usize("gen.max_phonemes")?,
        fp_rate_trigger: r.f64("gen.fp_rate_trigger")?,
        fp_rate_other: r.f64("gen.fp_rate_other")?,
        um_fraction: r.f64("gen.um_fraction")?,
        id_prefix: r.str("gen.id_prefix")?.to_string(),
    })
}

/// Stage keys; defaults come from the stage kind.
pub fn stage_defaults(stage: crate::adaptation::StageKind) -> Vec<(&'static str, String)> {
    let d = crate::adaptation::StageConfig::defaults(stage, 0);
    vec![
        ("stage.steps", d.steps.to_string()),
        ("stage.learning_rate", d.learning_rate.to_string()),
        ("stage.batch_size", d.batch_size.to_string()),
        ("stage.sigma", d.sigma.to_string()),
        ("stage.warmup_fraction", d.warmup_fraction.to_string()),
        ("stage.log_every", d.log_every.to_string()),
        ("stage.fp_speaker", String::new()),
        ("stage.target_speaker", String::new()),
    ]
}

pub fn stage_config_from(
    r: &Resolver,
    stage: crate::adaptation::StageKind,
    seed: u64,
) -> Result<crate::adaptation::StageConfig> {
    let mut cfg = crate::adaptation::StageConfig::defaults(stage, seed);
    cfg.steps = r.u64("stage.steps")?;
    cfg.learning_rate = r.f64("stage.learning_rate")?;
    cfg.batch_size = r.usize("stage.batch_size")?;
    cfg.sigma = r.f64("stage.sigma")?;
    cfg.warmup_fraction = r.f64("stage.warmup_fraction")?;
    cfg.log_every = r.u64("stage.log_every")?.max(1);
    let fp_speaker = r.str("stage.fp_speaker")?;
    if !fp_speaker.is_empty() {
        cfg.fp_speaker = Some(fp_speaker.to_string());
    }
    let target = r.str("stage.target_speaker")?;
    if !target.is_empty() {
        cfg.target_speaker = Some(target.to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_rejected() {
        let mut r = Resolver::new(&[("a.b", "1")]);
        assert!(r.apply_overrides(&["a.b=2".into()]).is_ok());
        assert!(r.apply_overrides(&["a.c=2".into()]).is_err());
        assert_eq!(r.usize("a.b").unwrap(), 2);
    }

    #[test]
    fn snapshot_is_sorted_and_hashable() {
        let r = Resolver::new(&[("z.k", "1"), ("a.k", "2")]);
        let snap = r.snapshot();
        assert_eq!(snap, "a.k=2\nz.k=1\n");
        assert_eq!(r.config_hash().len(), 64);
    }

    #[test]
    fn file_parsing_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "# comment\n\nmodel.hidden_dim = 16\n").unwrap();
        let mut r = Resolver::new(&model_defaults());
        r.apply_file(&p).unwrap();
        assert_eq!(r.usize("model.hidden_dim").unwrap(), 16);
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "model.hidden_dim\n").unwrap();
        let mut r = Resolver::new(&model_defaults());
        match r.apply_file(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
