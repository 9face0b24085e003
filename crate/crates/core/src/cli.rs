//! Command implementations behind the `spontts` binary: corpus mining,
//! synthetic generation, staged training, synthesis, FP threshold
//! evaluation, and reports. Every command resolves its configuration
//! (defaults → file → overrides), writes a `resolved.cfg` snapshot beside
//! its outputs, and is byte-reproducible given (inputs, config, seed).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::adaptation::{
    load_checkpoint, log_to_csv, run_stage, save_checkpoint, StageConfig, StageData, StageKind,
};
use crate::config::{
    generator_config_from, generator_defaults, model_config_from, model_defaults, stage_config_from,
    stage_defaults, Resolver,
};
use crate::corpus::{
    build_adaptation_datasets, duration_distribution_report, generate_synthetic_corpus,
    parse_marked_text, Corpus, FpDataset, Lexicon, Style, UtteranceRecord, BOS,
    DEFAULT_TIMBRE_SIZE,
};
use crate::error::{Error, Result};
use crate::eval::{default_threshold_grid, eval_fp, fp_eval_csv};
use crate::model::{AcousticModel, SynthesisConfig, Vocab};
use crate::util::mix_seed;

/// Options shared by every subcommand.
#[derive(Clone, Debug)]
pub struct CommonOpts {
    pub config_file: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: u64,
    pub out: PathBuf,
}

fn resolve(common: &CommonOpts, mut r: Resolver) -> Result<Resolver> {
    if let Some(path) = &common.config_file {
        r.apply_file(path)?;
    }
    r.apply_overrides(&common.overrides)?;
    Ok(r)
}

fn write_snapshot(out: &Path, r: &Resolver) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("resolved.cfg"), r.snapshot())?;
    Ok(())
}

/// `synth-corpus`: deterministic synthetic corpus + distribution report.
pub fn cmd_synth_corpus(common: &CommonOpts) -> Result<()> {
    let r = resolve(common, Resolver::new(&generator_defaults()))?;
    let cfg = generator_config_from(&r)?;
    let corpus = generate_synthetic_corpus(&cfg, common.seed)?;
    write_snapshot(&common.out, &r)?;
    let manifest = corpus.save(&common.out, "corpus")?;
    let report = duration_distribution_report(&corpus)?;
    fs::write(common.out.join("duration_report.csv"), report.to_csv())?;
    println!(
        "wrote {} records ({} uh, {} um) to {}",
        manifest.records,
        manifest.fp_uh,
        manifest.fp_um,
        common.out.display()
    );
    Ok(())
}

fn records_from_transcripts(path: &Path, lexicon: &Lexicon) -> Result<Vec<UtteranceRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut oov: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tokens = parse_marked_text(line, i + 1)?;
        match lexicon.tokens_to_symbols(&tokens) {
            Ok(symbols) => {
                let mut phonemes = vec![BOS.to_string()];
                phonemes.extend(symbols);
                let n = phonemes.len();
                records.push(UtteranceRecord {
                    id: format!("line{:05}", i + 1),
                    speaker: "mined".to_string(),
                    style: Style::Spontaneous,
                    phonemes,
                    durations: vec![0; n],
                    pitch: vec![0.0; n],
                    mel: None,
                });
            }
            Err(Error::Oov { words }) => {
                for w in words {
                    if !oov.contains(&w) {
                        oov.push(w);
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
    if !oov.is_empty() {
        return Err(Error::Oov { words: oov });
    }
    Ok(records)
}

/// `mine`: transcripts (or an aligned corpus) → SPON-FP / SPON-RHYTHM /
/// SPON-TIMBRE datasets with manifests.
pub fn cmd_mine(input: &Path, lexicon_path: Option<&Path>, common: &CommonOpts) -> Result<()> {
    let r = resolve(
        common,
        Resolver::new(&[("mine.timbre_size", &DEFAULT_TIMBRE_SIZE.to_string())]),
    )?;
    let timbre_size = r.usize("mine.timbre_size")?;
    let lexicon = match lexicon_path {
        Some(p) => Lexicon::from_file(p)?,
        None => Lexicon::bundled(),
    };
    let corpus = if input.extension().map(|e| e == "jsonl").unwrap_or(false) {
        Corpus::load(input)?
    } else {
        Corpus {
            records: records_from_transcripts(input, &lexicon)?,
        }
    };
    let datasets = build_adaptation_datasets(&corpus, timbre_size)?;
    write_snapshot(&common.out, &r)?;
    let fp_manifest = datasets
        .spon_fp
        .save(&common.out, "spon_fp", datasets.warnings.clone())?;
    datasets.spon_rhythm.save(&common.out, "spon_rhythm")?;
    datasets.spon_timbre.save(&common.out, "spon_timbre")?;
    for w in &datasets.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "spon_fp: {} pairs ({} uh, {} um); spon_rhythm: {}; spon_timbre: {} (speaker {})",
        fp_manifest.records,
        fp_manifest.fp_uh,
        fp_manifest.fp_um,
        datasets.spon_rhythm.len(),
        datasets.spon_timbre.len(),
        datasets.timbre_speaker.as_deref().unwrap_or("-")
    );
    Ok(())
}

fn finish_training_run(
    model: &AcousticModel<f32>,
    outcome: &crate::adaptation::TrainOutcome,
    r: &Resolver,
    common: &CommonOpts,
) -> Result<()> {
    write_snapshot(&common.out, r)?;
    let manifest = save_checkpoint(
        model,
        None,
        &common.out.join("checkpoint"),
        common.seed,
        &r.config_hash(),
    )?;
    fs::write(common.out.join("train_log.csv"), log_to_csv(&outcome.log))?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "stage {} done: loss {:.6} -> {:.6}; checkpoint {}",
        model
            .stage_history
            .last()
            .map(|s| s.stage.as_str())
            .unwrap_or("?"),
        outcome.first_total,
        outcome.final_total,
        manifest.checkpoint_id()
    );
    Ok(())
}

/// `train`: source model training on a reading-style corpus.
pub fn cmd_train(corpus_path: &Path, common: &CommonOpts) -> Result<()> {
    let mut defaults = Resolver::new(&model_defaults());
    defaults.extend(&stage_defaults(StageKind::Source));
    let r = resolve(common, defaults)?;
    let corpus = Corpus::load(corpus_path)?;
    if corpus.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    let cfg = model_config_from(&r)?;
    let vocab = Vocab::build(
        corpus
            .records
            .iter()
            .flat_map(|rec| rec.phonemes.iter().map(String::as_str)),
    );
    let speakers = corpus.speakers();
    let mut model =
        AcousticModel::<f32>::new(cfg, vocab, speakers, mix_seed(common.seed, "init"))?;
    let stage_cfg = stage_config_from(&r, StageKind::Source, common.seed)?;
    let outcome = run_stage(&mut model, StageData::Corpus(&corpus), &stage_cfg)?;
    finish_training_run(&model, &outcome, &r, common)
}

fn run_adaptation(
    kind: StageKind,
    data_path: &Path,
    checkpoint_in: &Path,
    common: &CommonOpts,
    extra: impl FnOnce(&mut StageConfig),
) -> Result<()> {
    let mut defaults = Resolver::new(&[]);
    defaults.extend(&stage_defaults(kind));
    let r = resolve(common, defaults)?;
    let loaded = load_checkpoint::<f32>(checkpoint_in, None)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let mut model = loaded.model;
    let mut stage_cfg = stage_config_from(&r, kind, common.seed)?;
    extra(&mut stage_cfg);
    let outcome = match kind {
        StageKind::Fp => {
            let ds = FpDataset::load(data_path)?;
            run_stage(&mut model, StageData::FpPairs(&ds), &stage_cfg)?
        }
        _ => {
            let corpus = Corpus::load(data_path)?;
            run_stage(&mut model, StageData::Corpus(&corpus), &stage_cfg)?
        }
    };
    finish_training_run(&model, &outcome, &r, common)
}

pub fn cmd_adapt_fp(spon_fp: &Path, checkpoint_in: &Path, common: &CommonOpts) -> Result<()> {
    run_adaptation(StageKind::Fp, spon_fp, checkpoint_in, common, |_| {})
}

pub fn cmd_adapt_rhythm(
    spon_rhythm: &Path,
    checkpoint_in: &Path,
    common: &CommonOpts,
) -> Result<()> {
    run_adaptation(StageKind::Rhythm, spon_rhythm, checkpoint_in, common, |_| {})
}

pub fn cmd_adapt_speaker(
    spon_timbre: &Path,
    checkpoint_in: &Path,
    speaker: Option<String>,
    common: &CommonOpts,
) -> Result<()> {
    run_adaptation(StageKind::Speaker, spon_timbre, checkpoint_in, common, |cfg| {
        if speaker.is_some() {
            cfg.target_speaker = speaker;
        }
    })
}

#[derive(Serialize)]
struct SynthMeta {
    checkpoint_id: String,
    speaker: String,
    fp_enabled: bool,
    fp_threshold: f64,
    symbols: Vec<String>,
    fp_tags: Vec<u8>,
    durations: Vec<u32>,
    pitch: Vec<f32>,
    frames: usize,
    mel_dim: usize,
    warnings: Vec<String>,
}

/// `synth`: text or phonemes → mel binary + sidecar metadata.
#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    checkpoint_in: &Path,
    text: Option<&str>,
    phonemes: Option<&str>,
    speaker: &str,
    threshold: f64,
    fp_enabled: bool,
    lexicon_path: Option<&Path>,
    common: &CommonOpts,
) -> Result<()> {
    let r = resolve(common, Resolver::new(&[]))?;
    let loaded = load_checkpoint::<f32>(checkpoint_in, None)?;
    let model = loaded.model;
    if !model.has_stage("source") {
        return Err(Error::StageOrder(
            "synthesis requires a checkpoint whose history contains \"source\"".into(),
        ));
    }

    let mut symbols: Vec<String> = vec![BOS.to_string()];
    match (text, phonemes) {
        (Some(t), None) => {
            let lexicon = match lexicon_path {
                Some(p) => Lexicon::from_file(p)?,
                None => Lexicon::bundled(),
            };
            let tokens = parse_marked_text(t, 1)?;
            symbols.extend(lexicon.tokens_to_symbols(&tokens)?);
        }
        (None, Some(p)) => symbols.extend(p.split_whitespace().map(String::from)),
        _ => {
            return Err(Error::Config(
                "provide exactly one of --text or --phonemes".into(),
            ))
        }
    }
    let ids = model.vocab.ids(&symbols)?;

    let scfg = SynthesisConfig {
        fp_threshold: threshold,
        fp_enabled,
        speaker: speaker.to_string(),
    };
    let out = model.synthesize(&ids, &scfg)?;
    write_snapshot(&common.out, &r)?;
    crate::corpus::records::write_mel(&common.out.join("mel.f32"), &out.mel)?;
    let meta = SynthMeta {
        checkpoint_id: loaded.manifest.checkpoint_id(),
        speaker: speaker.to_string(),
        fp_enabled,
        fp_threshold: threshold,
        symbols: out.symbols.clone(),
        fp_tags: out.fp_tags.iter().map(|&t| t as u8).collect(),
        durations: out.durations.clone(),
        pitch: out.pitch.clone(),
        frames: out.mel.rows(),
        mel_dim: out.mel.cols(),
        warnings: out.warnings.clone(),
    };
    fs::write(
        common.out.join("synth_meta.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "synthesized {} frames over {} positions ({} FP inserted)",
        out.mel.rows(),
        out.symbols.len(),
        out.fp_tags.iter().filter(|t| t.is_fp()).count()
    );
    Ok(())
}

/// `eval-fp`: threshold sweep over a held-out SPON-FP split.
pub fn cmd_eval_fp(
    checkpoint_in: &Path,
    spon_fp: &Path,
    thresholds: Option<Vec<f64>>,
    common: &CommonOpts,
) -> Result<()> {
    let r = resolve(common, Resolver::new(&[("eval.speaker", "")]))?;
    let loaded = load_checkpoint::<f32>(checkpoint_in, None)?;
    let model = loaded.model;
    let ds = FpDataset::load(spon_fp)?;
    let grid = thresholds.unwrap_or_else(default_threshold_grid);
    let speaker_key = r.str("eval.speaker")?.to_string();
    let speaker = if speaker_key.is_empty() {
        model.speakers[0].clone()
    } else {
        speaker_key
    };
    let rows = eval_fp(&model, &ds, &grid, &speaker)?;
    write_snapshot(&common.out, &r)?;
    let csv = fp_eval_csv(&rows);
    fs::write(common.out.join("fp_eval.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// `report`: duration distribution for a corpus, or a summary of a training
/// log CSV.
pub fn cmd_report(input: &Path, common: &CommonOpts) -> Result<()> {
    let r = resolve(common, Resolver::new(&[]))?;
    write_snapshot(&common.out, &r)?;
    match input.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => {
            let corpus = Corpus::load(input)?;
            let report = duration_distribution_report(&corpus)?;
            let csv = report.to_csv();
            fs::write(common.out.join("duration_report.csv"), &csv)?;
            for s in &report.styles {
                println!(
                    "{}: count {}, mean {:.2}, p50 {}, p95 {}",
                    s.style.name(),
                    s.count,
                    s.mean,
                    s.p50,
                    s.p95
                );
            }
        }
        Some("csv") => {
            let text = fs::read_to_string(input)?;
            let mut lines = text.lines();
            let header = lines
                .next()
                .ok_or_else(|| Error::Data("empty training log".into()))?;
            let last = lines
                .clone()
                .last()
                .ok_or_else(|| Error::Data("training log has no rows".into()))?;
            let summary = format!("{header}\n{last}\n");
            fs::write(common.out.join("log_summary.csv"), &summary)?;
            println!("final step: {last}");
        }
        _ => {
            return Err(Error::Config(format!(
                "report input must be .jsonl (corpus) or .csv (training log), got {}",
                input.display()
            )))
        }
    }
    Ok(())
}
