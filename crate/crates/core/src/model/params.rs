//! Parameter construction and naming. Staged adaptation freezes/unfreezes
//! parameters by name pattern, so the naming scheme here is a contract:
//!
//! - `phoneme_embedding`, `fp_embedding`, `speaker_embedding.{name}`
//! - `encoder.block{i}.attn.*` / `.ffn.*`, each with a `cln.*` group for the
//!   conditional layer norm generators; `decoder.block{i}.*` likewise
//! - predictor heads: `fp_predictor.*`, `pitch_predictor.*`,
//!   `duration_predictor.*`, `speed_router.*`, `duration_expert.{speed}.*`
//! - `pitch_proj.w`, `mel_out.*`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Scalar, Tensor};

pub const FP_ROWS: usize = 2; // row 0 = uh, row 1 = um

fn randn<S: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<S> {
    let dist = Normal::new(0.0f64, std).unwrap();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64(dist.sample(rng)))
        .collect::<Vec<S>>();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

fn xavier<S: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<S> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64(rng.gen_range(-a..a)))
        .collect::<Vec<S>>();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

fn register_linear<S: Scalar>(
    ps: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    d_in: usize,
    d_out: usize,
) -> Result<()> {
    ps.register(&format!("{prefix}_w"), xavier(rng, &[d_in, d_out], d_in, d_out))?;
    ps.register(&format!("{prefix}_b"), Tensor::zeros(&[1, d_out]))?;
    Ok(())
}

fn register_conv<S: Scalar>(
    ps: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    ch_in: usize,
    ch_out: usize,
    kernel: usize,
) -> Result<()> {
    ps.register(
        &format!("{prefix}_w"),
        xavier(rng, &[ch_out, ch_in, kernel], ch_in * kernel, ch_out * kernel),
    )?;
    ps.register(&format!("{prefix}_b"), Tensor::zeros(&[1, ch_out]))?;
    Ok(())
}

/// Conditional layer norm generators: scale(s) = s·gamma_w + gamma_b and
/// shift(s) = s·beta_w + beta_b. Weights start small but nonzero so speaker
/// conditioning is live from the first step; biases start at identity.
fn register_cln<S: Scalar>(
    ps: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    d: usize,
) -> Result<()> {
    ps.register(&format!("{prefix}.gamma_w"), randn(rng, &[d, d], 0.01))?;
    ps.register(&format!("{prefix}.gamma_b"), Tensor::full(&[1, d], S::one()))?;
    ps.register(&format!("{prefix}.beta_w"), randn(rng, &[d, d], 0.01))?;
    ps.register(&format!("{prefix}.beta_b"), Tensor::zeros(&[1, d]))?;
    Ok(())
}

fn register_block<S: Scalar>(
    ps: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cfg: &ModelConfig,
) -> Result<()> {
    let d = cfg.hidden_dim;
    for name in ["wq", "wk", "wv", "wo"] {
        ps.register(&format!("{prefix}.attn.{name}"), xavier(rng, &[d, d], d, d))?;
    }
    for name in ["bq", "bk", "bv", "bo"] {
        ps.register(&format!("{prefix}.attn.{name}"), Tensor::zeros(&[1, d]))?;
    }
    register_cln(ps, rng, &format!("{prefix}.attn.cln"), d)?;
    register_conv(ps, rng, &format!("{prefix}.ffn.conv1"), d, cfg.ffn_filter, cfg.conv_kernel)?;
    register_conv(ps, rng, &format!("{prefix}.ffn.conv2"), cfg.ffn_filter, d, cfg.conv_kernel)?;
    register_cln(ps, rng, &format!("{prefix}.ffn.cln"), d)?;
    Ok(())
}

/// Two conv layers with ReLU, each followed by layer norm and dropout, then a
/// linear output layer. The output layer starts at zero, so untrained
/// classifier heads emit uniform distributions.
pub fn register_predictor<S: Scalar>(
    ps: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cfg: &ModelConfig,
    out_dim: usize,
) -> Result<()> {
    let ch = cfg.predictor_conv_channels;
    register_conv(ps, rng, &format!("{prefix}.conv1"), cfg.hidden_dim, ch, cfg.predictor_kernel)?;
    ps.register(&format!("{prefix}.ln1_gamma"), Tensor::full(&[1, ch], S::one()))?;
    ps.register(&format!("{prefix}.ln1_beta"), Tensor::zeros(&[1, ch]))?;
    register_conv(ps, rng, &format!("{prefix}.conv2"), ch, ch, cfg.predictor_kernel)?;
    ps.register(&format!("{prefix}.ln2_gamma"), Tensor::full(&[1, ch], S::one()))?;
    ps.register(&format!("{prefix}.ln2_beta"), Tensor::zeros(&[1, ch]))?;
    ps.register(&format!("{prefix}.out_w"), Tensor::zeros(&[ch, out_dim]))?;
    ps.register(&format!("{prefix}.out_b"), Tensor::zeros(&[1, out_dim]))?;
    Ok(())
}

/// Builds the full parameter set for a fresh model. Deterministic given
/// (config, vocab, speakers, seed).
pub fn build_params<S: Scalar>(
    cfg: &ModelConfig,
    vocab: &Vocab,
    speakers: &[String],
    seed: u64,
) -> Result<ParamSet<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let d = cfg.hidden_dim;

    ps.register("phoneme_embedding", randn(&mut rng, &[vocab.len(), d], 0.1))?;

    // FP embeddings are their own table, never shared with phoneme
    // embeddings. Start each row at the mean of its spelling's phoneme
    // embeddings when those phonemes exist in the vocabulary (uh = "ah",
    // um = "ah"+"m"); otherwise draw a fresh row.
    let emb = ps.value("phoneme_embedding")?.clone();
    let mut fp_rows: Vec<S> = Vec::with_capacity(FP_ROWS * d);
    for spelling in [&["ah"][..], &["ah", "m"][..]] {
        let ids: Option<Vec<usize>> = spelling.iter().map(|s| vocab.id(s).ok()).collect();
        match ids {
            Some(ids) => {
                let inv = S::from_f64(1.0 / ids.len() as f64);
                for j in 0..d {
                    let mut acc = S::zero();
                    for &i in &ids {
                        acc = acc + emb.at(i, j);
                    }
                    fp_rows.push(acc * inv);
                }
            }
            None => fp_rows.extend(randn::<S>(&mut rng, &[1, d], 0.1).into_data()),
        }
    }
    ps.register("fp_embedding", Tensor::new(vec![FP_ROWS, d], fp_rows)?)?;

    let mut sorted = speakers.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.is_empty() {
        return Err(Error::Config("model needs at least one speaker".into()));
    }
    for name in &sorted {
        ps.register(
            &format!("speaker_embedding.{name}"),
            randn(&mut rng, &[1, d], 0.1),
        )?;
    }

    for b in 0..cfg.encoder_blocks {
        register_block(&mut ps, &mut rng, &format!("encoder.block{b}"), cfg)?;
    }

    register_predictor(&mut ps, &mut rng, "fp_predictor", cfg, 3)?;
    register_predictor(&mut ps, &mut rng, "pitch_predictor", cfg, 1)?;
    register_predictor(&mut ps, &mut rng, "duration_predictor", cfg, 1)?;
    register_predictor(&mut ps, &mut rng, "speed_router", cfg, 3)?;

    ps.register("pitch_proj.w", randn(&mut rng, &[1, d], 0.1))?;

    for b in 0..cfg.decoder_blocks {
        register_block(&mut ps, &mut rng, &format!("decoder.block{b}"), cfg)?;
    }
    register_linear(&mut ps, &mut rng, "mel_out", d, cfg.mel_dim)?;

    Ok(ps)
}

/// Copies every parameter under `src_prefix.` to `dst_prefix.`, preserving
/// suffixes. Used to initialize the three duration experts from the source
/// duration predictor.
pub fn clone_prefix<S: Scalar>(
    ps: &mut ParamSet<S>,
    src_prefix: &str,
    dst_prefix: &str,
) -> Result<usize> {
    let src: Vec<(String, Tensor<S>)> = ps
        .iter()
        .filter(|p| p.name.starts_with(&format!("{src_prefix}.")))
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    if src.is_empty() {
        return Err(Error::State(format!(
            "no parameters found under prefix {src_prefix}"
        )));
    }
    let mut copied = 0;
    for (name, value) in src {
        let suffix = &name[src_prefix.len()..];
        ps.register(&format!("{dst_prefix}{suffix}"), value)?;
        copied += 1;
    }
    Ok(copied)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_vocab() -> Vocab {
        Vocab::build(["ah", "m", "p00", "p01"])
    }

    #[test]
    fn param_build_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let v = small_vocab();
        let speakers = vec!["spk0".to_string()];
        let a = build_params::<f32>(&cfg, &v, &speakers, 7).unwrap();
        let b = build_params::<f32>(&cfg, &v, &speakers, 7).unwrap();
        assert_eq!(a.value_hashes(), b.value_hashes());
        let c = build_params::<f32>(&cfg, &v, &speakers, 8).unwrap();
        assert_ne!(a.value_hashes(), c.value_hashes());
    }

    #[test]
    fn fp_embedding_uses_spelling_mean() {
        let cfg = ModelConfig::tiny();
        let v = small_vocab();
        let ps = build_params::<f64>(&cfg, &v, &["s".to_string()], 1).unwrap();
        let emb = ps.value("phoneme_embedding").unwrap();
        let fp = ps.value("fp_embedding").unwrap();
        let ah = v.id("ah").unwrap();
        let m = v.id("m").unwrap();
        for j in 0..cfg.hidden_dim {
            assert_eq!(fp.at(0, j), emb.at(ah, j));
            let mean = (emb.at(ah, j) + emb.at(m, j)) / 2.0;
            assert!((fp.at(1, j) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn clone_prefix_copies_all_leaves() {
        let cfg = ModelConfig::tiny();
        let v = small_vocab();
        let mut ps = build_params::<f32>(&cfg, &v, &["s".to_string()], 1).unwrap();
        let n = clone_prefix(&mut ps, "duration_predictor", "duration_expert.fast").unwrap();
        assert_eq!(n, 10);
        assert_eq!(
            ps.value("duration_expert.fast.out_w").unwrap(),
            ps.value("duration_predictor.out_w").unwrap()
        );
    }

    #[test]
    fn router_head_starts_at_zero() {
        let cfg = ModelConfig::tiny();
        let ps = build_params::<f32>(&cfg, &small_vocab(), &["s".to_string()], 3).unwrap();
        assert!(ps
            .value("speed_router.out_w")
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
    }
}
