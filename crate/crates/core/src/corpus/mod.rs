//! Dataset mining and synthesis: FP-marked transcript parsing, text–FP pair
//! extraction, speed buckets, the three adaptation datasets, and the
//! synthetic verification corpus.
//!
//! Everything here is a pure function of its inputs plus an explicit seed;
//! file writes are single-writer per output path.

pub mod buckets;
pub mod fp;
pub mod lexicon;
pub mod records;
pub mod report;
pub mod synthetic;
pub mod transcript;

pub use buckets::{assign_speed_tag, compute_speed_buckets, SpeedBucketBoundaries, SpeedTag};
pub use fp::{extract_fp_pair, fp_spelling, reinsert_fp, FpPair, FpTag, BOS, UH_TOKEN, UM_TOKEN};
pub use lexicon::Lexicon;
pub use records::{
    build_adaptation_datasets, AdaptationDatasets, Corpus, CorpusManifest, FpDataset,
    FpPairRecord, Style, UtteranceRecord, DEFAULT_TIMBRE_SIZE, MEL_DIM,
};
pub use report::{duration_distribution_report, DurationReport};
pub use synthetic::{generate_synthetic_corpus, GeneratorConfig};
pub use transcript::{parse_marked_text, Token};
