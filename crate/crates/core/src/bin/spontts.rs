use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spontts::cli::{self, CommonOpts};

#[derive(Parser)]
#[command(
    name = "spontts",
    about = "Spontaneous-style TTS adaptation: dataset mining, staged training, synthesis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file applied over defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value overrides applied last (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; also receives the resolved-config snapshot
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn opts(&self) -> CommonOpts {
        CommonOpts {
            config_file: self.config.clone(),
            overrides: self.overrides.clone(),
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Mine SPON-FP / SPON-RHYTHM / SPON-TIMBRE from transcripts or a corpus
    Mine {
        /// Transcript .txt (one utterance per line) or aligned corpus .jsonl
        #[arg(long)]
        input: PathBuf,
        /// Pronunciation lexicon file (bundled dictionary if omitted)
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a deterministic synthetic corpus
    SynthCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Source model training on a reading-style corpus
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// FP predictor adaptation on a SPON-FP dataset
    AdaptFp {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Rhythm adaptation (speed router, duration experts, pitch predictor)
    AdaptRhythm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Speaker timbre adaptation (conditional layer norm + speaker row)
    AdaptSpeaker {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target speaker (dominant corpus speaker if omitted)
        #[arg(long)]
        speaker: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize mel frames from text or phonemes
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "phonemes")]
        text: Option<String>,
        /// Whitespace-separated phoneme symbols (BOS added automatically)
        #[arg(long)]
        phonemes: Option<String>,
        #[arg(long)]
        speaker: String,
        /// FP intensity threshold T in [0,1]
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Disable FP prediction/insertion
        #[arg(long)]
        no_fp: bool,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the FP decision threshold over a held-out SPON-FP split
    EvalFp {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated thresholds (default grid 0.10..0.99 if omitted)
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Duration-distribution report (.jsonl) or training-log summary (.csv)
    Report {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn run() -> spontts::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Mine {
            input,
            lexicon,
            common,
        } => cli::cmd_mine(&input, lexicon.as_deref(), &common.opts()),
        Command::SynthCorpus { common } => cli::cmd_synth_corpus(&common.opts()),
        Command::Train { corpus, common } => cli::cmd_train(&corpus, &common.opts()),
        Command::AdaptFp {
            corpus,
            checkpoint,
            common,
        } => cli::cmd_adapt_fp(&corpus, &checkpoint, &common.opts()),
        Command::AdaptRhythm {
            corpus,
            checkpoint,
            common,
        } => cli::cmd_adapt_rhythm(&corpus, &checkpoint, &common.opts()),
        Command::AdaptSpeaker {
            corpus,
            checkpoint,
            speaker,
            common,
        } => cli::cmd_adapt_speaker(&corpus, &checkpoint, speaker, &common.opts()),
        Command::Synth {
            checkpoint,
            text,
            phonemes,
            speaker,
            threshold,
            no_fp,
            lexicon,
            common,
        } => cli::cmd_synth(
            &checkpoint,
            text.as_deref(),
            phonemes.as_deref(),
            &speaker,
            threshold,
            !no_fp,
            lexicon.as_deref(),
            &common.opts(),
        ),
        Command::EvalFp {
            checkpoint,
            corpus,
            thresholds,
            common,
        } => cli::cmd_eval_fp(&checkpoint, &corpus, thresholds, &common.opts()),
        Command::Report { input, common } => cli::cmd_report(&input, &common.opts()),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
