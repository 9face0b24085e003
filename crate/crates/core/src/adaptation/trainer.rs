//! The training loop shared by all four stages: deterministic data order,
//! gradient accumulation over the batch, Adam with optional warmup, per-step
//! loss logging, and strict stage-order and freezing semantics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::stages::{resolve_trainable, StageConfig, StageKind};
use crate::corpus::buckets::{assign_speed_tag, compute_speed_buckets, SpeedTag};
use crate::corpus::fp::{reinsert_fp, FpPair, BOS};
use crate::corpus::records::{Corpus, FpDataset, Style, UtteranceRecord};
use crate::error::{Error, Result};
use crate::model::{AcousticModel, LossBundle, LossSelect, StageRecord};
use crate::numerics::{AdamHyper, AdamOptimizer, Scalar};
use crate::util::mix_seed;

/// Stage input: full records for source/rhythm/speaker, text–FP pairs for
/// the FP stage.
pub enum StageData<'a> {
    Corpus(&'a Corpus),
    FpPairs(&'a FpDataset),
}

#[derive(Clone, Debug)]
pub struct LogRow {
    pub step: u64,
    pub stage: &'static str,
    pub lr: f64,
    pub total: f64,
    pub mel_l1: Option<f64>,
    pub duration_mse: Option<f64>,
    pub pitch_mse: Option<f64>,
    pub fp_ce: Option<f64>,
    pub router_ce: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub first_total: f64,
    pub final_total: f64,
    pub target_speaker: Option<String>,
    pub warnings: Vec<String>,
}

/// Ensures an FP pair starts with the BOS sentinel the model expects.
pub fn pair_with_bos(pair: &FpPair) -> FpPair {
    if pair.phonemes.first().map(String::as_str) == Some(BOS) {
        return pair.clone();
    }
    let mut phonemes = Vec::with_capacity(pair.len() + 1);
    let mut tags = Vec::with_capacity(pair.len() + 1);
    phonemes.push(BOS.to_string());
    tags.push(crate::corpus::fp::FpTag::None);
    phonemes.extend(pair.phonemes.iter().cloned());
    tags.extend(pair.tags.iter().copied());
    FpPair { phonemes, tags }
}

/// Text-only pseudo-record for FP-stage training: FP tokens are inline so
/// the forward pass recovers the tags; durations and pitch are unused.
fn fp_pair_record(pair: &FpPair, id: &str, speaker: &str) -> UtteranceRecord {
    let symbols = reinsert_fp(&pair_with_bos(pair));
    let n = symbols.len();
    UtteranceRecord {
        id: id.to_string(),
        speaker: speaker.to_string(),
        style: Style::Spontaneous,
        phonemes: symbols,
        durations: vec![0; n],
        pitch: vec![0.0; n],
        mel: None,
    }
}

fn dominant_speaker(corpus: &Corpus) -> Option<String> {
    let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
    for r in &corpus.records {
        *counts.entry(r.speaker.as_str()).or_insert(0) += 1;
    }
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(s, _)| s.to_string())
}

/// Runs one training stage in place. Returns the per-step loss log.
pub fn run_stage<S: Scalar>(
    model: &mut AcousticModel<S>,
    data: StageData<'_>,
    cfg: &StageConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(pre) = cfg.stage.prerequisite() {
        if !model.has_stage(pre) {
            return Err(Error::StageOrder(format!(
                "stage {:?} requires a checkpoint whose history contains {pre:?}",
                cfg.stage.name()
            )));
        }
    }

    let mut warnings = Vec::new();
    let mut target_speaker = None;

    // Stage-specific preparation: datasets, new parameters, loss selection.
    let (records, sel): (Vec<UtteranceRecord>, LossSelect) = match (cfg.stage, &data) {
        (StageKind::Source, StageData::Corpus(corpus)) => {
            if corpus.is_empty() {
                return Err(Error::Data("source training corpus is empty".into()));
            }
            corpus.validate()?;
            model.merge_pitch_stats(corpus);
            (corpus.records.clone(), LossSelect::source())
        }
        (StageKind::Fp, StageData::FpPairs(ds)) => {
            if ds.is_empty() {
                return Err(Error::Data("SPON-FP dataset is empty".into()));
            }
            let speaker = cfg
                .fp_speaker
                .clone()
                .unwrap_or_else(|| model.speakers[0].clone());
            let records = ds
                .pairs
                .iter()
                .map(|p| fp_pair_record(&p.pair, &p.id, &speaker))
                .collect();
            (records, LossSelect::fp(cfg.sigma))
        }
        (StageKind::Rhythm, StageData::Corpus(corpus)) => {
            if corpus.is_empty() {
                return Err(Error::Data("SPON-RHYTHM corpus is empty".into()));
            }
            corpus.validate()?;
            let durations: Vec<u32> = corpus
                .records
                .iter()
                .flat_map(|r| r.durations.iter().copied())
                .collect();
            let buckets = compute_speed_buckets(&durations)?;
            for tag in SpeedTag::ALL {
                if !durations
                    .iter()
                    .any(|&d| assign_speed_tag(d, buckets) == tag)
                {
                    return Err(Error::Data(format!(
                        "speed bucket {:?} has zero positions in the fitting set",
                        tag.name()
                    )));
                }
            }
            model.buckets = Some(buckets);
            if !model.has_experts() {
                model.create_experts()?;
            }
            model.merge_pitch_stats(corpus);
            (corpus.records.clone(), LossSelect::rhythm())
        }
        (StageKind::Speaker, StageData::Corpus(corpus)) => {
            if corpus.is_empty() {
                return Err(Error::Data("speaker adaptation corpus is empty".into()));
            }
            corpus.validate()?;
            let target = match &cfg.target_speaker {
                Some(t) => t.clone(),
                None => dominant_speaker(corpus)
                    .ok_or_else(|| Error::Data("adaptation corpus has no records".into()))?,
            };
            let records: Vec<UtteranceRecord> = corpus
                .records
                .iter()
                .filter(|r| r.speaker == target)
                .cloned()
                .collect();
            if records.is_empty() {
                return Err(Error::Data(format!(
                    "no adaptation utterances for target speaker {target:?}"
                )));
            }
            if model.ensure_speaker(&target)? {
                warnings.push(format!(
                    "speaker {target:?} was unknown; created a new embedding row from the mean of existing rows"
                ));
            }
            model.merge_pitch_stats(&Corpus {
                records: records.clone(),
            });
            target_speaker = Some(target);
            (records, LossSelect::speaker())
        }
        (stage, _) => {
            return Err(Error::Config(format!(
                "stage {:?} received the wrong dataset kind",
                stage.name()
            )));
        }
    };

    // Resolve the frozen/trainable split only after any new parameters
    // (experts, speaker rows) exist.
    let mut patterns = cfg.trainable.clone();
    if cfg.stage == StageKind::Speaker {
        if let Some(t) = &target_speaker {
            let row = format!("speaker_embedding.{t}");
            if !patterns.iter().any(|p| super::stages::pattern_matches(&row, p)) {
                patterns.push(row);
            }
        }
    }
    let trainable = resolve_trainable(&model.params, &patterns)?;
    let mut optimizer = AdamOptimizer::new(
        AdamHyper {
            learning_rate: cfg.learning_rate,
            ..AdamHyper::default()
        },
        &model.params,
        &trainable,
    );

    let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "data-order"));
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::new();
    let mut first_total = f64::NAN;
    let mut final_total = f64::NAN;

    for step in 1..=cfg.steps {
        model.params.zero_grads();
        let mut sums = LossBundle::default();
        let mut counts = [0usize; 5];
        let inv_batch = S::from_f64(1.0 / cfg.batch_size as f64);
        for item in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..records.len()).collect();
                order.shuffle(&mut order_rng);
            }
            let record = &records[order.pop().expect("refilled above")];
            let dropout_rng = ChaCha8Rng::seed_from_u64(mix_seed(
                cfg.seed,
                &format!("dropout:{step}:{item}"),
            ));
            let mut fwd = model.forward_train(record, sel, Some(dropout_rng))?;
            let scaled = fwd.graph.scale(fwd.total, inv_batch);
            fwd.graph.backward(scaled, &mut model.params)?;
            accumulate(&mut sums, &mut counts, &fwd.bundle);
        }
        let bundle = finish(sums, counts, cfg.batch_size);
        if !bundle.is_finite() {
            return Err(Error::State(format!(
                "non-finite loss at stage {:?} step {step}",
                cfg.stage.name()
            )));
        }
        let lr = cfg.lr_at(step);
        optimizer.step(&mut model.params, lr)?;

        if step == 1 {
            first_total = bundle.total;
        }
        final_total = bundle.total;
        if step % cfg.log_every == 0 || step == cfg.steps {
            log.push(LogRow {
                step,
                stage: cfg.stage.name(),
                lr,
                total: bundle.total,
                mel_l1: bundle.mel_l1,
                duration_mse: bundle.duration_mse,
                pitch_mse: bundle.pitch_mse,
                fp_ce: bundle.fp_ce,
                router_ce: bundle.router_ce,
            });
        }
    }

    model.stage_history.push(StageRecord {
        stage: cfg.stage.name().to_string(),
        steps: cfg.steps,
        seed: cfg.seed,
    });

    Ok(TrainOutcome {
        log,
        first_total,
        final_total,
        target_speaker,
        warnings,
    })
}

fn accumulate(sums: &mut LossBundle, counts: &mut [usize; 5], b: &LossBundle) {
    let slots = [
        (&mut sums.mel_l1, b.mel_l1, 0),
        (&mut sums.duration_mse, b.duration_mse, 1),
        (&mut sums.pitch_mse, b.pitch_mse, 2),
        (&mut sums.fp_ce, b.fp_ce, 3),
        (&mut sums.router_ce, b.router_ce, 4),
    ];
    for (slot, val, idx) in slots {
        if let Some(v) = val {
            *slot = Some(slot.unwrap_or(0.0) + v);
            counts[idx] += 1;
        }
    }
    sums.total += b.total;
}

fn finish(mut sums: LossBundle, counts: [usize; 5], batch: usize) -> LossBundle {
    let slots = [
        (&mut sums.mel_l1, 0),
        (&mut sums.duration_mse, 1),
        (&mut sums.pitch_mse, 2),
        (&mut sums.fp_ce, 3),
        (&mut sums.router_ce, 4),
    ];
    for (slot, idx) in slots {
        if let Some(v) = slot.as_mut() {
            *v /= counts[idx].max(1) as f64;
        }
    }
    sums.total /= batch as f64;
    sums
}

/// Training-log CSV: one row per logged step, empty cells for inactive
/// losses.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out =
        String::from("step,stage,lr,total,mel_l1,duration_mse,pitch_mse,fp_ce,router_ce\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{},{},{},{}\n",
            r.step,
            r.stage,
            r.lr,
            r.total,
            fmt(r.mel_l1),
            fmt(r.duration_mse),
            fmt(r.pitch_mse),
            fmt(r.fp_ce),
            fmt(r.router_ce),
        ));
    }
    out
}
