//! The acoustic model: phoneme encoder, FP predictor with embedding
//! insertion, pitch predictor, MoE duration predictor (speed router + three
//! experts), length regulator, and mel decoder with speaker conditioning.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, SynthesisConfig};
use super::layers::{sinusoidal_pe, Ctx};
use super::params::{build_params, clone_prefix};
use super::vocab::Vocab;
use crate::corpus::buckets::{assign_speed_tag, SpeedBucketBoundaries, SpeedTag};
use crate::corpus::fp::{FpTag, BOS};
use crate::corpus::records::{Corpus, UtteranceRecord};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamSet, Scalar, Tensor};

/// Per-speaker pitch normalization statistics fit on the training corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchStats {
    pub mean: f32,
    pub std: f32,
}

/// One completed training stage, recorded in checkpoint history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub steps: u64,
    pub seed: u64,
}

/// Expert prefixes in speed order.
pub const EXPERT_PREFIXES: [&str; 3] = [
    "duration_expert.fast",
    "duration_expert.medium",
    "duration_expert.slow",
];

pub struct AcousticModel<S: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub speakers: Vec<String>,
    pub params: ParamSet<S>,
    pub pitch_stats: BTreeMap<String, PitchStats>,
    pub buckets: Option<SpeedBucketBoundaries>,
    pub stage_history: Vec<StageRecord>,
}

/// Which loss components a forward pass computes.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossSelect {
    pub mel: bool,
    pub pitch: bool,
    pub duration_single: bool,
    /// Weighted-CE sigma for the FP predictor loss.
    pub fp_sigma: Option<f64>,
    pub router: bool,
    pub experts: bool,
}

impl LossSelect {
    pub fn source() -> Self {
        LossSelect {
            mel: true,
            pitch: true,
            duration_single: true,
            ..Default::default()
        }
    }

    pub fn fp(sigma: f64) -> Self {
        LossSelect {
            fp_sigma: Some(sigma),
            ..Default::default()
        }
    }

    pub fn rhythm() -> Self {
        LossSelect {
            pitch: true,
            router: true,
            experts: true,
            ..Default::default()
        }
    }

    pub fn speaker() -> Self {
        LossSelect {
            mel: true,
            ..Default::default()
        }
    }

    fn needs_sequence(&self) -> bool {
        self.mel || self.pitch || self.duration_single || self.router || self.experts
    }
}

/// Loss values of one forward pass, one entry per active component.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBundle {
    pub mel_l1: Option<f64>,
    pub duration_mse: Option<f64>,
    pub pitch_mse: Option<f64>,
    pub fp_ce: Option<f64>,
    pub router_ce: Option<f64>,
    pub total: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [
            self.mel_l1,
            self.duration_mse,
            self.pitch_mse,
            self.fp_ce,
            self.router_ce,
        ]
        .iter()
        .flatten()
        .all(|v| v.is_finite())
            && self.total.is_finite()
    }
}

pub struct TrainForward<S: Scalar> {
    pub graph: Graph<S>,
    pub total: NodeId,
    pub bundle: LossBundle,
}

/// Full synthesis output: mel frames plus every intermediate for inspection.
#[derive(Clone, Debug)]
pub struct SynthesisOutput {
    pub mel: Tensor<f32>,
    /// Per base-position decision.
    pub fp_tags: Vec<FpTag>,
    /// Per extended-position predicted frame counts (clamped to >= 1).
    pub durations: Vec<u32>,
    /// Per extended-position pitch in the speaker-normalized domain.
    pub pitch: Vec<f32>,
    /// Extended symbol sequence including inserted FP tokens.
    pub symbols: Vec<String>,
    pub warnings: Vec<String>,
}

/// Row source of the FP-extended hidden sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
enum ExtRow {
    Base(usize),
    Fp(FpTag),
}

/// Threshold rule: if s0 exceeds T the position stays NONE, otherwise it
/// gets the FP with the larger probability (ties go to uh, the majority
/// class in mined data). s0 is floored at 1e-12, so T=0 yields no FPs.
pub fn decide_fp_tags(probs: &[[f64; 3]], threshold: f64) -> Vec<FpTag> {
    probs
        .iter()
        .map(|&[s0, s1, s2]| {
            if s0.max(1e-12) > threshold {
                FpTag::None
            } else if s1 >= s2 {
                FpTag::Uh
            } else {
                FpTag::Um
            }
        })
        .collect()
}

/// Convex combination of expert predictions in the log-duration domain.
pub fn moe_combine(router: [f64; 3], expert_logs: [f64; 3]) -> f64 {
    router[0] * expert_logs[0] + router[1] * expert_logs[1] + router[2] * expert_logs[2]
}

/// Inference clamp: frames = max(1, round(exp(x) − 1)).
pub fn frames_from_log(x: f64) -> u32 {
    let raw = (x.exp() - 1.0).round();
    if raw < 1.0 {
        1
    } else {
        raw as u32
    }
}

/// Training target for a duration of `d` frames.
pub fn log_duration_target(d: u32) -> f64 {
    (1.0 + d as f64).ln()
}

impl<S: Scalar> AcousticModel<S> {
    pub fn new(
        mut config: ModelConfig,
        vocab: Vocab,
        speakers: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        let mut speakers = speakers;
        speakers.sort();
        speakers.dedup();
        let params = build_params(&config, &vocab, &speakers, seed)?;
        config.phoneme_vocab_size = vocab.len();
        config.speaker_count = speakers.len();
        Ok(AcousticModel {
            config,
            vocab,
            speakers,
            params,
            pitch_stats: BTreeMap::new(),
            buckets: None,
            stage_history: Vec::new(),
        })
    }

    pub fn has_experts(&self) -> bool {
        self.params.slot("duration_expert.fast.out_w").is_some()
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stage_history.iter().any(|s| s.stage == stage)
    }

    /// Initializes the three duration experts as copies of the source
    /// duration predictor. Idempotent error if they already exist.
    pub fn create_experts(&mut self) -> Result<()> {
        if self.has_experts() {
            return Err(Error::State("duration experts already exist".into()));
        }
        for prefix in EXPERT_PREFIXES {
            clone_prefix(&mut self.params, "duration_predictor", prefix)?;
        }
        Ok(())
    }

    /// Adds a speaker embedding row initialized to the mean of the existing
    /// rows. Returns true when a row was created.
    pub fn ensure_speaker(&mut self, name: &str) -> Result<bool> {
        if self.speakers.iter().any(|s| s == name) {
            return Ok(false);
        }
        let d = self.config.hidden_dim;
        let mut mean = vec![S::zero(); d];
        for s in &self.speakers {
            let row = self.params.value(&format!("speaker_embedding.{s}"))?;
            for j in 0..d {
                mean[j] = mean[j] + row.data()[j];
            }
        }
        let inv = S::from_f64(1.0 / self.speakers.len() as f64);
        for v in mean.iter_mut() {
            *v = *v * inv;
        }
        self.params.register(
            &format!("speaker_embedding.{name}"),
            Tensor::new(vec![1, d], mean)?,
        )?;
        self.speakers.push(name.to_string());
        self.config.speaker_count = self.speakers.len();
        Ok(true)
    }

    /// Fits pitch stats for any speaker present in `corpus` but missing from
    /// the stats table. Existing stats are never overwritten.
    pub fn merge_pitch_stats(&mut self, corpus: &Corpus) {
        let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
        for r in &corpus.records {
            if self.pitch_stats.contains_key(&r.speaker) {
                continue;
            }
            let e = sums.entry(r.speaker.as_str()).or_insert((0.0, 0.0, 0));
            for &p in &r.pitch {
                e.0 += p as f64;
                e.1 += (p as f64) * (p as f64);
                e.2 += 1;
            }
        }
        for (speaker, (s, s2, n)) in sums {
            if n == 0 {
                continue;
            }
            let mean = s / n as f64;
            let var = (s2 / n as f64 - mean * mean).max(0.0);
            self.pitch_stats.insert(
                speaker.to_string(),
                PitchStats {
                    mean: mean as f32,
                    std: (var.sqrt() as f32).max(1e-3),
                },
            );
        }
    }

    pub fn normalize_pitch(&self, speaker: &str, pitch: &[f32]) -> Result<Vec<f32>> {
        let stats = self.pitch_stats.get(speaker).ok_or_else(|| {
            Error::State(format!("no pitch statistics for speaker {speaker}"))
        })?;
        Ok(pitch.iter().map(|&p| (p - stats.mean) / stats.std).collect())
    }

    fn speaker_node(&self, ctx: &mut Ctx<'_, S>, speaker: &str) -> Result<NodeId> {
        if !self.speakers.iter().any(|s| s == speaker) {
            return Err(Error::Vocabulary(format!("unknown speaker {speaker:?}")));
        }
        ctx.p(&format!("speaker_embedding.{speaker}"))
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        for &id in ids {
            if id >= self.vocab.len() {
                return Err(Error::Vocabulary(format!(
                    "phoneme id {id} out of range {}",
                    self.vocab.len()
                )));
            }
            if Vocab::is_fp_id(id) {
                return Err(Error::Vocabulary(
                    "FP tokens enter via embedding insertion, not the encoder input".into(),
                ));
            }
        }
        Ok(())
    }

    /// Phoneme encoder: embedding + sinusoidal positions, then the encoder
    /// blocks with speaker-conditional layer norm. Length-preserving.
    fn encode_nodes(
        &self,
        ctx: &mut Ctx<'_, S>,
        ids: &[usize],
        speaker: &str,
    ) -> Result<NodeId> {
        self.check_ids(ids)?;
        let spk = self.speaker_node(ctx, speaker)?;
        let emb_table = ctx.p("phoneme_embedding")?;
        let emb = ctx.g.gather_rows(emb_table, ids.to_vec())?;
        let pe = ctx.input(sinusoidal_pe(ids.len(), self.config.hidden_dim));
        let x = ctx.g.add(emb, pe)?;
        let mut x = ctx.dropout(x);
        for b in 0..self.config.encoder_blocks {
            x = ctx.transformer_block(x, &format!("encoder.block{b}"), spk)?;
        }
        Ok(x)
    }

    /// Evaluation-mode encode, returning the hidden sequence values.
    pub fn encode(&self, ids: &[usize], speaker: &str) -> Result<Tensor<S>> {
        let mut ctx = Ctx::eval(&self.params, &self.config);
        let h = self.encode_nodes(&mut ctx, ids, speaker)?;
        Ok(ctx.g.value(h).clone())
    }

    /// Per-position FP probabilities [s0, s1, s2] from encoder hiddens.
    pub fn predict_fp_probs(&self, ids: &[usize], speaker: &str) -> Result<Vec<[f64; 3]>> {
        let mut ctx = Ctx::eval(&self.params, &self.config);
        let h = self.encode_nodes(&mut ctx, ids, speaker)?;
        let logits = ctx.predictor(h, "fp_predictor")?;
        let probs = ctx.g.softmax_rows(logits);
        Ok(rows3(ctx.g.value(probs)))
    }

    /// One FP embedding row inserted right after each tagged position.
    fn insert_fp_nodes(
        &self,
        ctx: &mut Ctx<'_, S>,
        hidden: NodeId,
        rows: &[ExtRow],
    ) -> Result<NodeId> {
        if rows.iter().all(|r| matches!(r, ExtRow::Base(_))) {
            return Ok(hidden);
        }
        let base_len = ctx.g.value(hidden).rows();
        let fp_table = ctx.p("fp_embedding")?;
        let cat = ctx.g.concat_rows(&[hidden, fp_table])?;
        let indices: Vec<usize> = rows
            .iter()
            .map(|r| match r {
                ExtRow::Base(i) => *i,
                ExtRow::Fp(FpTag::Uh) => base_len,
                ExtRow::Fp(FpTag::Um) => base_len + 1,
                ExtRow::Fp(FpTag::None) => unreachable!("no-op rows are Base"),
            })
            .collect();
        ctx.g.gather_rows(cat, indices)
    }

    /// Frame expansion: position i repeated durations[i] times, in order.
    fn regulate_indices(durations: &[u32]) -> Vec<usize> {
        let total: usize = durations.iter().map(|&d| d as usize).sum();
        let mut idx = Vec::with_capacity(total);
        for (i, &d) in durations.iter().enumerate() {
            for _ in 0..d {
                idx.push(i);
            }
        }
        idx
    }

    /// Mel decoder: frame hiddens plus projected frame-level pitch and
    /// positions, decoder blocks with conditional layer norm, linear to mel.
    fn decode_nodes(
        &self,
        ctx: &mut Ctx<'_, S>,
        frame_hidden: NodeId,
        pitch_frames: NodeId,
        speaker: &str,
    ) -> Result<NodeId> {
        let frames = ctx.g.value(frame_hidden).rows();
        if ctx.g.value(pitch_frames).rows() != frames {
            return Err(Error::Dimension(format!(
                "pitch frames {} do not match hidden frames {}",
                ctx.g.value(pitch_frames).rows(),
                frames
            )));
        }
        let spk = self.speaker_node(ctx, speaker)?;
        let proj_w = ctx.p("pitch_proj.w")?;
        let proj = ctx.g.matmul(pitch_frames, proj_w)?;
        let x = ctx.g.add(frame_hidden, proj)?;
        let pe = ctx.input(sinusoidal_pe(frames, self.config.hidden_dim));
        let x = ctx.g.add(x, pe)?;
        let mut x = ctx.dropout(x);
        for b in 0..self.config.decoder_blocks {
            x = ctx.transformer_block(x, &format!("decoder.block{b}"), spk)?;
        }
        ctx.linear(x, "mel_out")
    }

    /// Teacher-forced training pass: ground-truth durations expand the
    /// sequence and ground-truth pitch conditions the decoder; each selected
    /// loss is returned separately so stages can train subsets.
    pub fn forward_train(
        &self,
        record: &UtteranceRecord,
        sel: LossSelect,
        rng: Option<ChaCha8Rng>,
    ) -> Result<TrainForward<S>> {
        record.validate().map_err(|e| Error::Data(e.to_string()))?;
        if record.phonemes.first().map(String::as_str) != Some(BOS) {
            return Err(Error::Data(format!(
                "record {}: training records must start with the {BOS} sentinel",
                record.id
            )));
        }
        let (base_syms, base_tags, rows) = split_extension(&record.phonemes)?;
        let base_ids = self.vocab.ids(&base_syms)?;

        let mut ctx = match rng {
            Some(rng) => Ctx::train(&self.params, &self.config, rng),
            None => Ctx::eval(&self.params, &self.config),
        };
        let hidden = self.encode_nodes(&mut ctx, &base_ids, &record.speaker)?;

        let mut parts: Vec<NodeId> = Vec::new();
        let mut bundle = LossBundle::default();

        if let Some(sigma) = sel.fp_sigma {
            if sigma <= 0.0 {
                return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
            }
            let logits = ctx.predictor(hidden, "fp_predictor")?;
            let labels: Vec<usize> = base_tags.iter().map(|&t| t as u8 as usize).collect();
            let weights = vec![S::one(), S::from_f64(sigma), S::from_f64(sigma)];
            let mask = vec![true; labels.len()];
            let node = ctx.g.ce_from_logits(logits, labels, weights, mask)?;
            bundle.fp_ce = Some(ctx.g.value(node).item().as_f64());
            parts.push(node);
        }

        if sel.needs_sequence() {
            let ext = self.insert_fp_nodes(&mut ctx, hidden, &rows)?;
            let ext_len = record.phonemes.len();
            debug_assert_eq!(ctx.g.value(ext).rows(), ext_len);

            if sel.pitch {
                let target = self.normalize_pitch(&record.speaker, &record.pitch)?;
                let tgt = ctx.input(Tensor::from_f32_slice(&[ext_len, 1], &target)?);
                let pred = ctx.predictor(ext, "pitch_predictor")?;
                let diff = ctx.g.sub(pred, tgt)?;
                let sq = ctx.g.mul(diff, diff)?;
                let node = ctx.g.mean_all(sq);
                bundle.pitch_mse = Some(ctx.g.value(node).item().as_f64());
                parts.push(node);
            }

            let dur_targets: Vec<f64> = record
                .durations
                .iter()
                .map(|&d| log_duration_target(d))
                .collect();

            if sel.duration_single {
                let tgt_t = Tensor::new(
                    vec![ext_len, 1],
                    dur_targets.iter().map(|&x| S::from_f64(x)).collect(),
                )?;
                let tgt = ctx.input(tgt_t);
                let pred = ctx.predictor(ext, "duration_predictor")?;
                let diff = ctx.g.sub(pred, tgt)?;
                let sq = ctx.g.mul(diff, diff)?;
                let node = ctx.g.mean_all(sq);
                bundle.duration_mse = Some(ctx.g.value(node).item().as_f64());
                parts.push(node);
            }

            if sel.router || sel.experts {
                let buckets = self.buckets.ok_or_else(|| {
                    Error::State("speed buckets required for router/expert losses".into())
                })?;
                let tags: Vec<SpeedTag> = record
                    .durations
                    .iter()
                    .map(|&d| assign_speed_tag(d, buckets))
                    .collect();

                if sel.router {
                    let logits = ctx.predictor(ext, "speed_router")?;
                    let labels: Vec<usize> = tags.iter().map(|t| t.index()).collect();
                    let node = ctx.g.ce_from_logits(
                        logits,
                        labels,
                        vec![S::one(); 3],
                        vec![true; ext_len],
                    )?;
                    bundle.router_ce = Some(ctx.g.value(node).item().as_f64());
                    parts.push(node);
                }

                if sel.experts {
                    if !self.has_experts() {
                        return Err(Error::State(
                            "expert losses requested but experts are not initialized".into(),
                        ));
                    }
                    let tgt_t = Tensor::new(
                        vec![ext_len, 1],
                        dur_targets.iter().map(|&x| S::from_f64(x)).collect(),
                    )?;
                    let tgt = ctx.input(tgt_t);
                    let mut acc: Option<NodeId> = None;
                    for (k, prefix) in EXPERT_PREFIXES.iter().enumerate() {
                        let mask_vals: Vec<S> = tags
                            .iter()
                            .map(|t| if t.index() == k { S::one() } else { S::zero() })
                            .collect();
                        let mask = ctx.input(Tensor::new(vec![ext_len, 1], mask_vals)?);
                        let pred = ctx.predictor(ext, prefix)?;
                        let diff = ctx.g.sub(pred, tgt)?;
                        let sq = ctx.g.mul(diff, diff)?;
                        let masked = ctx.g.mul(sq, mask)?;
                        let summed = ctx.g.sum_all(masked);
                        acc = Some(match acc {
                            Some(a) => ctx.g.add(a, summed)?,
                            None => summed,
                        });
                    }
                    let node = ctx
                        .g
                        .scale(acc.expect("three experts"), S::from_f64(1.0 / ext_len as f64));
                    bundle.duration_mse = Some(ctx.g.value(node).item().as_f64());
                    parts.push(node);
                }
            }

            if sel.mel {
                let mel = record.mel.as_ref().ok_or_else(|| {
                    Error::Data(format!("record {} has no mel for the mel loss", record.id))
                })?;
                let frame_idx = Self::regulate_indices(&record.durations);
                let frame_hidden = ctx.g.gather_rows(ext, frame_idx.clone())?;
                let pitch_norm = self.normalize_pitch(&record.speaker, &record.pitch)?;
                let pitch_frames: Vec<f32> =
                    frame_idx.iter().map(|&i| pitch_norm[i]).collect();
                let pf = ctx.input(Tensor::from_f32_slice(
                    &[pitch_frames.len(), 1],
                    &pitch_frames,
                )?);
                let pred = self.decode_nodes(&mut ctx, frame_hidden, pf, &record.speaker)?;
                let target = ctx.input(Tensor::from_f32_slice(
                    mel.shape(),
                    mel.data(),
                )?);
                let diff = ctx.g.sub(pred, target)?;
                let a = ctx.g.abs(diff);
                let node = ctx.g.mean_all(a);
                bundle.mel_l1 = Some(ctx.g.value(node).item().as_f64());
                parts.push(node);
            }
        }

        if parts.is_empty() {
            return Err(Error::Config("no loss components selected".into()));
        }
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = ctx.g.add(total, p)?;
        }
        bundle.total = ctx.g.value(total).item().as_f64();
        Ok(TrainForward {
            graph: ctx.g,
            total,
            bundle,
        })
    }

    /// Full inference pipeline; deterministic given parameters, inputs, and
    /// threshold (dropout disabled).
    pub fn synthesize(&self, ids: &[usize], scfg: &SynthesisConfig) -> Result<SynthesisOutput> {
        scfg.validate()?;
        let mut warnings = Vec::new();
        let mut ctx = Ctx::eval(&self.params, &self.config);
        let hidden = self.encode_nodes(&mut ctx, ids, &scfg.speaker)?;

        let fp_tags = if scfg.fp_enabled {
            if !self.has_stage("fp") {
                warnings.push(
                    "fp predictor has not been adapted; FP decisions come from the untrained head"
                        .to_string(),
                );
            }
            let logits = ctx.predictor(hidden, "fp_predictor")?;
            let probs_node = ctx.g.softmax_rows(logits);
            let probs = rows3(ctx.g.value(probs_node));
            decide_fp_tags(&probs, scfg.fp_threshold)
        } else {
            vec![FpTag::None; ids.len()]
        };

        let mut rows = Vec::with_capacity(ids.len() + fp_tags.iter().filter(|t| t.is_fp()).count());
        let mut symbols = Vec::with_capacity(rows.capacity());
        for (i, (&id, tag)) in ids.iter().zip(&fp_tags).enumerate() {
            rows.push(ExtRow::Base(i));
            symbols.push(self.vocab.symbol(id)?.to_string());
            if tag.is_fp() {
                rows.push(ExtRow::Fp(*tag));
                symbols.push(tag.token().expect("is_fp").to_string());
            }
        }
        let ext = self.insert_fp_nodes(&mut ctx, hidden, &rows)?;
        let ext_len = rows.len();

        let pitch_node = ctx.predictor(ext, "pitch_predictor")?;
        let pitch: Vec<f32> = ctx.g.value(pitch_node).to_f32_vec();

        let log_durations: Vec<f64> = if self.has_experts() {
            let router_logits = ctx.predictor(ext, "speed_router")?;
            let probs_node = ctx.g.softmax_rows(router_logits);
            let router = rows3(ctx.g.value(probs_node));
            let mut expert_cols: Vec<Vec<f64>> = Vec::with_capacity(3);
            for prefix in EXPERT_PREFIXES {
                let pred = ctx.predictor(ext, prefix)?;
                expert_cols.push(ctx.g.value(pred).data().iter().map(|v| v.as_f64()).collect());
            }
            (0..ext_len)
                .map(|i| {
                    moe_combine(
                        router[i],
                        [expert_cols[0][i], expert_cols[1][i], expert_cols[2][i]],
                    )
                })
                .collect()
        } else {
            let pred = ctx.predictor(ext, "duration_predictor")?;
            ctx.g.value(pred).data().iter().map(|v| v.as_f64()).collect()
        };
        let durations: Vec<u32> = log_durations.iter().map(|&x| frames_from_log(x)).collect();

        let frame_idx = Self::regulate_indices(&durations);
        let frame_hidden = ctx.g.gather_rows(ext, frame_idx.clone())?;
        let pitch_frames: Vec<f32> = frame_idx.iter().map(|&i| pitch[i]).collect();
        let pf = ctx.input(Tensor::from_f32_slice(&[pitch_frames.len(), 1], &pitch_frames)?);
        let mel_node = self.decode_nodes(&mut ctx, frame_hidden, pf, &scfg.speaker)?;
        let mel_s = ctx.g.value(mel_node);
        let mel = Tensor::new(mel_s.shape().to_vec(), mel_s.to_f32_vec())?;

        Ok(SynthesisOutput {
            mel,
            fp_tags,
            durations,
            pitch,
            symbols,
            warnings,
        })
    }

    /// Evaluation-mode value pass shared by metric code: per base-position
    /// FP probabilities for a known symbol sequence.
    pub fn fp_probs_for_symbols(
        &self,
        symbols: &[String],
        speaker: &str,
    ) -> Result<Vec<[f64; 3]>> {
        let ids = self.vocab.ids(symbols)?;
        self.predict_fp_probs(&ids, speaker)
    }

    /// Evaluation-mode rhythm predictions for one record with ground-truth
    /// FP insertion: router distribution, per-expert and single-predictor
    /// log durations, and the log-domain targets, all per extended position.
    pub fn rhythm_view(&self, record: &UtteranceRecord) -> Result<RhythmView> {
        record.validate().map_err(|e| Error::Data(e.to_string()))?;
        let (base_syms, _tags, rows) = split_extension(&record.phonemes)?;
        let base_ids = self.vocab.ids(&base_syms)?;
        let mut ctx = Ctx::eval(&self.params, &self.config);
        let hidden = self.encode_nodes(&mut ctx, &base_ids, &record.speaker)?;
        let ext = self.insert_fp_nodes(&mut ctx, hidden, &rows)?;

        let router_logits = ctx.predictor(ext, "speed_router")?;
        let probs_node = ctx.g.softmax_rows(router_logits);
        let router = rows3(ctx.g.value(probs_node));

        let single_node = ctx.predictor(ext, "duration_predictor")?;
        let single: Vec<f64> = ctx
            .g
            .value(single_node)
            .data()
            .iter()
            .map(|v| v.as_f64())
            .collect();

        let experts = if self.has_experts() {
            let mut cols = Vec::with_capacity(3);
            for prefix in EXPERT_PREFIXES {
                let pred = ctx.predictor(ext, prefix)?;
                cols.push(
                    ctx.g
                        .value(pred)
                        .data()
                        .iter()
                        .map(|v| v.as_f64())
                        .collect::<Vec<f64>>(),
                );
            }
            Some(
                (0..rows.len())
                    .map(|i| [cols[0][i], cols[1][i], cols[2][i]])
                    .collect(),
            )
        } else {
            None
        };

        let targets = record
            .durations
            .iter()
            .map(|&d| log_duration_target(d))
            .collect();
        Ok(RhythmView {
            router,
            experts,
            single,
            targets,
            durations: record.durations.clone(),
        })
    }
}

/// Rhythm-side predictions for one record, used by evaluation code.
#[derive(Clone, Debug)]
pub struct RhythmView {
    pub router: Vec<[f64; 3]>,
    pub experts: Option<Vec<[f64; 3]>>,
    pub single: Vec<f64>,
    /// log(1+d) targets per extended position.
    pub targets: Vec<f64>,
    pub durations: Vec<u32>,
}

/// Splits a record's symbol sequence (FP tokens inline) into the base
/// sequence, per-base-position tags, and the extended row layout.
fn split_extension(symbols: &[String]) -> Result<(Vec<String>, Vec<FpTag>, Vec<ExtRow>)> {
    let mut base: Vec<String> = Vec::with_capacity(symbols.len());
    let mut tags: Vec<FpTag> = Vec::with_capacity(symbols.len());
    let mut rows: Vec<ExtRow> = Vec::with_capacity(symbols.len());
    for sym in symbols {
        match FpTag::of_symbol(sym) {
            Some(tag) => {
                if base.is_empty() {
                    return Err(Error::Data(
                        "sequence starts with an FP token; records must start with <bos>".into(),
                    ));
                }
                *tags.last_mut().expect("non-empty") = tag;
                rows.push(ExtRow::Fp(tag));
            }
            None => {
                rows.push(ExtRow::Base(base.len()));
                base.push(sym.clone());
                tags.push(FpTag::None);
            }
        }
    }
    Ok((base, tags, rows))
}

fn rows3<S: Scalar>(t: &Tensor<S>) -> Vec<[f64; 3]> {
    debug_assert_eq!(t.cols(), 3);
    (0..t.rows())
        .map(|i| {
            let r = t.row(i);
            [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{generate_synthetic_corpus, GeneratorConfig};
    use crate::model::vocab::{BOS_ID, UH_ID};
    use rand::SeedableRng;

    fn test_model() -> AcousticModel<f64> {
        let vocab = Vocab::build(["p00", "p01", "p02", "p03", "p04", "p05"]);
        AcousticModel::new(
            ModelConfig::tiny(),
            vocab,
            vec!["spk0".into(), "spk1".into()],
            11,
        )
        .unwrap()
    }

    fn test_record(model: &AcousticModel<f64>) -> UtteranceRecord {
        let mut cfg = GeneratorConfig::spontaneous();
        cfg.utterances = 1;
        cfg.speakers = 1;
        cfg.min_phonemes = 3;
        cfg.max_phonemes = 3;
        cfg.alphabet_size = 6;
        cfg.fp_rate_trigger = 1.0;
        cfg.fp_rate_other = 0.0;
        let corpus = generate_synthetic_corpus(&cfg, 3).unwrap();
        let _ = model;
        corpus.records[0].clone()
    }

    #[test]
    fn encode_shape_contract() {
        let m = test_model();
        let ids = vec![BOS_ID, m.vocab.id("p00").unwrap(), m.vocab.id("p01").unwrap()];
        let h = m.encode(&ids, "spk0").unwrap();
        assert_eq!(h.shape(), &[3, m.config.hidden_dim]);
        let h1 = m.encode(&[BOS_ID], "spk0").unwrap();
        assert_eq!(h1.shape(), &[1, m.config.hidden_dim]);
    }

    #[test]
    fn speaker_conditioning_is_live() {
        let m = test_model();
        let ids = vec![BOS_ID, m.vocab.id("p02").unwrap()];
        let a = m.encode(&ids, "spk0").unwrap();
        let b = m.encode(&ids, "spk1").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn fp_ids_rejected_by_encoder() {
        let m = test_model();
        assert!(matches!(
            m.encode(&[BOS_ID, UH_ID], "spk0"),
            Err(Error::Vocabulary(_))
        ));
    }

    #[test]
    fn unknown_speaker_is_vocabulary_error() {
        let m = test_model();
        assert!(matches!(
            m.encode(&[BOS_ID], "ghost"),
            Err(Error::Vocabulary(_))
        ));
    }

    #[test]
    fn fp_probs_rows_sum_to_one() {
        let m = test_model();
        let ids = vec![BOS_ID, m.vocab.id("p00").unwrap(), m.vocab.id("p03").unwrap()];
        let probs = m.predict_fp_probs(&ids, "spk0").unwrap();
        for row in probs {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn decide_fp_tag_rules() {
        assert_eq!(
            decide_fp_tags(&[[0.95, 0.03, 0.02]], 0.9),
            vec![FpTag::None]
        );
        assert_eq!(decide_fp_tags(&[[0.5, 0.2, 0.3]], 0.9), vec![FpTag::Um]);
        assert_eq!(decide_fp_tags(&[[0.5, 0.25, 0.25]], 0.9), vec![FpTag::Uh]);
        // T=1: s0 > 1 impossible, every position tagged.
        assert!(decide_fp_tags(&[[1.0, 0.0, 0.0]], 1.0)[0].is_fp());
        // T=0: s0 floored above zero, nothing tagged.
        assert_eq!(decide_fp_tags(&[[0.0, 0.6, 0.4]], 0.0), vec![FpTag::None]);
    }

    #[test]
    fn fp_tag_count_monotone_in_threshold() {
        let probs: Vec<[f64; 3]> = vec![
            [0.9, 0.05, 0.05],
            [0.6, 0.3, 0.1],
            [0.3, 0.3, 0.4],
            [0.05, 0.9, 0.05],
        ];
        let mut prev = 0;
        for t in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0] {
            let n = decide_fp_tags(&probs, t).iter().filter(|x| x.is_fp()).count();
            assert!(n >= prev, "count dropped at T={t}");
            prev = n;
        }
    }

    #[test]
    fn moe_combine_hand_case_and_onehot() {
        let combined = moe_combine([0.2, 0.3, 0.5], [0.0, 1.0, 2.0]);
        assert!((combined - 1.3).abs() < 1e-12);
        assert_eq!(frames_from_log(combined), 3);
        // One-hot router: bit-exact selection.
        let sel = moe_combine([0.0, 1.0, 0.0], [0.7, -1.25, 3.5]);
        assert_eq!(sel, -1.25);
        // Identical experts: independent of router.
        let a = moe_combine([0.1, 0.2, 0.7], [1.5, 1.5, 1.5]);
        assert!((a - 1.5).abs() < 1e-12);
    }

    #[test]
    fn regulate_indices_definition() {
        let idx = AcousticModel::<f64>::regulate_indices(&[2, 1, 3]);
        assert_eq!(idx, vec![0, 0, 1, 2, 2, 2]);
        assert!(AcousticModel::<f64>::regulate_indices(&[0, 0]).is_empty());
    }

    #[test]
    fn forward_train_full_bundle_is_finite() {
        let mut m = test_model();
        let record = test_record(&m);
        m.merge_pitch_stats(&Corpus {
            records: vec![record.clone()],
        });
        m.buckets = Some(SpeedBucketBoundaries { t1: 13, t2: 26 });
        m.create_experts().unwrap();
        let sel = LossSelect {
            mel: true,
            pitch: true,
            duration_single: true,
            fp_sigma: Some(5.0),
            router: true,
            experts: true,
        };
        let fwd = m.forward_train(&record, sel, None).unwrap();
        assert!(fwd.bundle.is_finite());
        assert!(fwd.bundle.mel_l1.is_some());
        assert!(fwd.bundle.router_ce.is_some());
        // Untrained router head is zero, so router CE is exactly ln 3.
        assert!((fwd.bundle.router_ce.unwrap() - 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn forward_train_gradcheck_on_tiny_record() {
        let mut m = test_model();
        let record = test_record(&m);
        m.merge_pitch_stats(&Corpus {
            records: vec![record.clone()],
        });
        m.buckets = Some(SpeedBucketBoundaries { t1: 13, t2: 26 });
        m.create_experts().unwrap();
        let sel = LossSelect {
            mel: true,
            pitch: true,
            duration_single: true,
            fp_sigma: Some(5.0),
            router: true,
            experts: true,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut params = m.params.clone();
        let err = crate::numerics::gradient_check(
            &mut params,
            |ps| {
                let probe = AcousticModel {
                    config: m.config.clone(),
                    vocab: m.vocab.clone(),
                    speakers: m.speakers.clone(),
                    params: ps.clone(),
                    pitch_stats: m.pitch_stats.clone(),
                    buckets: m.buckets,
                    stage_history: vec![],
                };
                let fwd = probe.forward_train(&record, sel, None)?;
                Ok((fwd.graph, fwd.total))
            },
            60,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(err <= 1e-4, "max rel err {err}");
    }

    #[test]
    fn synthesize_consistency() {
        let mut m = test_model();
        let corpus = generate_synthetic_corpus(
            &GeneratorConfig {
                alphabet_size: 6,
                utterances: 2,
                speakers: 1,
                ..GeneratorConfig::reading()
            },
            5,
        )
        .unwrap();
        m.merge_pitch_stats(&corpus);
        let ids = vec![BOS_ID, m.vocab.id("p01").unwrap(), m.vocab.id("p02").unwrap()];
        let mut scfg = SynthesisConfig::new("spk0");
        scfg.fp_threshold = 1.0; // force an FP after every position
        let out = m.synthesize(&ids, &scfg).unwrap();
        assert_eq!(out.symbols.len(), ids.len() * 2);
        assert_eq!(out.durations.len(), out.symbols.len());
        let frames: u32 = out.durations.iter().sum();
        assert_eq!(out.mel.rows() as u32, frames);
        assert_eq!(out.mel.cols(), 80);
        assert!(out.warnings.iter().any(|w| w.contains("not been adapted")));

        scfg.fp_enabled = false;
        let plain = m.synthesize(&ids, &scfg).unwrap();
        assert!(plain.fp_tags.iter().all(|t| !t.is_fp()));
        assert_eq!(plain.symbols.len(), ids.len());

        // Determinism
        let again = m.synthesize(&ids, &scfg).unwrap();
        assert_eq!(plain.mel, again.mel);
        assert_eq!(plain.durations, again.durations);
    }

    #[test]
    fn insertion_matches_table_layout() {
        // 14 base positions + BOS, tags after "d" (um) and "t" (uh) → 17 rows.
        let m = test_model();
        let _ = m;
        let mut symbols: Vec<String> = vec![BOS.to_string()];
        symbols.extend(
            "ih t s k ao l d <um> r ay t <uh> ae p ax l"
                .split_whitespace()
                .map(String::from),
        );
        let (base, tags, rows) = split_extension(&symbols).unwrap();
        assert_eq!(base.len(), 15);
        assert_eq!(rows.len(), 17);
        assert_eq!(tags.iter().filter(|t| t.is_fp()).count(), 2);
        assert_eq!(rows[8], ExtRow::Fp(FpTag::Um));
        assert_eq!(rows[12], ExtRow::Fp(FpTag::Uh));
    }

    #[test]
    fn ensure_speaker_adds_mean_row() {
        let mut m = test_model();
        let d = m.config.hidden_dim;
        let a = m.params.value("speaker_embedding.spk0").unwrap().clone();
        let b = m.params.value("speaker_embedding.spk1").unwrap().clone();
        assert!(m.ensure_speaker("spk9").unwrap());
        let c = m.params.value("speaker_embedding.spk9").unwrap();
        for j in 0..d {
            let mean = (a.data()[j] + b.data()[j]) / 2.0;
            assert!((c.data()[j] - mean).abs() < 1e-12);
        }
        assert!(!m.ensure_speaker("spk9").unwrap());
    }
}
