//! Aligned utterance records, corpus files, and adaptation-dataset
//! construction.
//!
//! On disk a corpus is a JSON-lines file (one record per line) with mel
//! frames in sibling binary files of 32-bit little-endian floats, row-major
//! frames×80, referenced by relative path. A manifest lists counts and
//! checksums.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fp::{extract_fp_pair, FpPair, FpTag};
use crate::error::{Error, Result};
use crate::numerics::params::hex_string;
use crate::numerics::Tensor;

pub const MEL_DIM: usize = 80;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Reading,
    Spontaneous,
}

impl Style {
    pub fn name(self) -> &'static str {
        match self {
            Style::Reading => "reading",
            Style::Spontaneous => "spontaneous",
        }
    }
}

/// One aligned training example. FPs, when present, appear as explicit
/// "<uh>"/"<um>" tokens in `phonemes`, with durations and pitch of their own.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub style: Style,
    pub phonemes: Vec<String>,
    /// Per-phoneme frame counts; their sum is the mel frame count.
    pub durations: Vec<u32>,
    /// Per-phoneme normalized log-F0 proxy.
    pub pitch: Vec<f32>,
    /// frames × 80, absent for text-only records.
    pub mel: Option<Tensor<f32>>,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.phonemes.len();
        if self.durations.len() != n || self.pitch.len() != n {
            return Err(Error::Data(format!(
                "record {}: lengths disagree (phonemes {}, durations {}, pitch {})",
                self.id,
                n,
                self.durations.len(),
                self.pitch.len()
            )));
        }
        if let Some(mel) = &self.mel {
            if mel.rank() != 2 || mel.cols() != MEL_DIM {
                return Err(Error::Data(format!(
                    "record {}: mel must be frames x {MEL_DIM}",
                    self.id
                )));
            }
            let frames: u64 = self.durations.iter().map(|&d| d as u64).sum();
            if frames != mel.rows() as u64 {
                return Err(Error::Data(format!(
                    "record {}: duration sum {} != mel frames {}",
                    self.id,
                    frames,
                    mel.rows()
                )));
            }
        }
        Ok(())
    }

    pub fn total_frames(&self) -> u64 {
        self.durations.iter().map(|&d| d as u64).sum()
    }

    pub fn fp_counts(&self) -> (usize, usize) {
        let uh = self
            .phonemes
            .iter()
            .filter(|p| FpTag::of_symbol(p) == Some(FpTag::Uh))
            .count();
        let um = self
            .phonemes
            .iter()
            .filter(|p| FpTag::of_symbol(p) == Some(FpTag::Um))
            .count();
        (uh, um)
    }

    pub fn has_fp(&self) -> bool {
        let (uh, um) = self.fp_counts();
        uh + um > 0
    }
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub records: Vec<UtteranceRecord>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    speaker: String,
    style: Style,
    phonemes: Vec<String>,
    durations: Vec<u32>,
    pitch: Vec<f32>,
    mel_path: Option<String>,
}

/// Dataset statistics block written beside every corpus/dataset file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub name: String,
    pub records: usize,
    pub per_speaker: BTreeMap<String, usize>,
    pub fp_uh: usize,
    pub fp_um: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
    /// Relative path → SHA-256 of file contents.
    pub files: BTreeMap<String, String>,
}

impl CorpusManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex_string(&Sha256::digest(&bytes)))
}

pub fn write_mel(path: &Path, mel: &Tensor<f32>) -> Result<()> {
    let mut out = Vec::with_capacity(mel.numel() * 4);
    for v in mel.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mel(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % (4 * MEL_DIM) != 0 {
        return Err(Error::Integrity(format!(
            "mel file {} has {} bytes, not a multiple of {}",
            path.display(),
            bytes.len(),
            4 * MEL_DIM
        )));
    }
    let frames = bytes.len() / (4 * MEL_DIM);
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(vec![frames, MEL_DIM], data)
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            r.validate()?;
        }
        Ok(())
    }

    pub fn fp_counts(&self) -> (usize, usize) {
        let mut uh = 0;
        let mut um = 0;
        for r in &self.records {
            let (u, m) = r.fp_counts();
            uh += u;
            um += m;
        }
        (uh, um)
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .records
            .iter()
            .map(|r| r.speaker.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        names.sort();
        names
    }

    /// Writes `{name}.jsonl`, mel files under `mels/`, and
    /// `{name}.manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, name: &str) -> Result<CorpusManifest> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let jsonl_rel = format!("{name}.jsonl");
        let jsonl_path = dir.join(&jsonl_rel);
        let mut files = BTreeMap::new();
        if self.records.iter().any(|r| r.mel.is_some()) {
            fs::create_dir_all(dir.join("mels"))?;
        }
        let mut out = fs::File::create(&jsonl_path)?;
        for r in &self.records {
            let mel_path = match &r.mel {
                Some(mel) => {
                    let rel = format!("mels/{}.f32", r.id);
                    let p = dir.join(&rel);
                    write_mel(&p, mel)?;
                    files.insert(rel.clone(), sha256_file(&p)?);
                    Some(rel)
                }
                None => None,
            };
            let line = RecordLine {
                id: r.id.clone(),
                speaker: r.speaker.clone(),
                style: r.style,
                phonemes: r.phonemes.clone(),
                durations: r.durations.clone(),
                pitch: r.pitch.clone(),
                mel_path,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        files.insert(jsonl_rel, sha256_file(&jsonl_path)?);

        let manifest = self.manifest(name, files, Vec::new(), BTreeMap::new());
        manifest.save(&dir.join(format!("{name}.manifest.json")))?;
        Ok(manifest)
    }

    pub fn manifest(
        &self,
        name: &str,
        files: BTreeMap<String, String>,
        warnings: Vec<String>,
        notes: BTreeMap<String, String>,
    ) -> CorpusManifest {
        let mut per_speaker = BTreeMap::new();
        for r in &self.records {
            *per_speaker.entry(r.speaker.clone()).or_insert(0) += 1;
        }
        let (fp_uh, fp_um) = self.fp_counts();
        CorpusManifest {
            name: name.to_string(),
            records: self.records.len(),
            per_speaker,
            fp_uh,
            fp_um,
            warnings,
            notes,
            files,
        }
    }

    pub fn load(jsonl_path: &Path) -> Result<Corpus> {
        let dir = jsonl_path.parent().map(PathBuf::from).unwrap_or_default();
        let file = fs::File::open(jsonl_path)?;
        let reader = BufReader::new(file);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| {
                Error::Data(format!(
                    "{}:{}: bad record line: {e}",
                    jsonl_path.display(),
                    i + 1
                ))
            })?;
            let mel = match &parsed.mel_path {
                Some(rel) => Some(read_mel(&dir.join(rel))?),
                None => None,
            };
            let record = UtteranceRecord {
                id: parsed.id,
                speaker: parsed.speaker,
                style: parsed.style,
                phonemes: parsed.phonemes,
                durations: parsed.durations,
                pitch: parsed.pitch,
                mel,
            };
            record.validate()?;
            records.push(record);
        }
        Ok(Corpus { records })
    }
}

/// One SPON-FP row: a text–FP pair plus the source utterance id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpPairRecord {
    pub id: String,
    #[serde(flatten)]
    pub pair: FpPair,
}

#[derive(Clone, Debug, Default)]
pub struct FpDataset {
    pub pairs: Vec<FpPairRecord>,
}

impl FpDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn fp_counts(&self) -> (usize, usize) {
        let mut uh = 0;
        let mut um = 0;
        for p in &self.pairs {
            for t in &p.pair.tags {
                match t {
                    FpTag::Uh => uh += 1,
                    FpTag::Um => um += 1,
                    FpTag::None => {}
                }
            }
        }
        (uh, um)
    }

    pub fn save(&self, dir: &Path, name: &str, warnings: Vec<String>) -> Result<CorpusManifest> {
        fs::create_dir_all(dir)?;
        let jsonl_rel = format!("{name}.jsonl");
        let path = dir.join(&jsonl_rel);
        let mut out = fs::File::create(&path)?;
        for p in &self.pairs {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        let mut files = BTreeMap::new();
        files.insert(jsonl_rel, sha256_file(&path)?);
        let (fp_uh, fp_um) = self.fp_counts();
        let manifest = CorpusManifest {
            name: name.to_string(),
            records: self.pairs.len(),
            per_speaker: BTreeMap::new(),
            fp_uh,
            fp_um,
            warnings,
            notes: BTreeMap::new(),
            files,
        };
        manifest.save(&dir.join(format!("{name}.manifest.json")))?;
        Ok(manifest)
    }

    pub fn load(jsonl_path: &Path) -> Result<FpDataset> {
        let file = fs::File::open(jsonl_path)?;
        let reader = BufReader::new(file);
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FpPairRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Data(format!(
                    "{}:{}: bad FP pair line: {e}",
                    jsonl_path.display(),
                    i + 1
                ))
            })?;
            if rec.pair.phonemes.len() != rec.pair.tags.len() {
                return Err(Error::Data(format!(
                    "{}:{}: pair lengths disagree",
                    jsonl_path.display(),
                    i + 1
                )));
            }
            pairs.push(rec);
        }
        Ok(FpDataset { pairs })
    }
}

/// The three adaptation datasets mined from a spontaneous corpus.
#[derive(Clone, Debug)]
pub struct AdaptationDatasets {
    pub spon_fp: FpDataset,
    pub spon_rhythm: Corpus,
    pub spon_timbre: Corpus,
    pub timbre_speaker: Option<String>,
    pub warnings: Vec<String>,
}

/// Default SPON-TIMBRE subset size.
pub const DEFAULT_TIMBRE_SIZE: usize = 50;

/// Builds SPON-FP (text–FP pairs, FP-free utterances discarded), SPON-RHYTHM
/// (every spontaneous utterance with phonemes+pitch+durations, mel dropped),
/// and SPON-TIMBRE (a subset of full records from the best-covered speaker).
pub fn build_adaptation_datasets(
    corpus: &Corpus,
    timbre_size: usize,
) -> Result<AdaptationDatasets> {
    let spontaneous: Vec<&UtteranceRecord> = corpus
        .records
        .iter()
        .filter(|r| r.style == Style::Spontaneous)
        .collect();
    if spontaneous.is_empty() {
        return Err(Error::Data(
            "corpus has no spontaneous-style records to mine".into(),
        ));
    }
    let mut warnings = Vec::new();

    let mut spon_fp = FpDataset::default();
    for r in &spontaneous {
        if !r.has_fp() {
            continue;
        }
        spon_fp.pairs.push(FpPairRecord {
            id: r.id.clone(),
            pair: extract_fp_pair(&r.phonemes),
        });
    }
    if spon_fp.is_empty() {
        warnings.push("SPON-FP is empty: no utterance contains a filled pause".to_string());
    }

    let spon_rhythm = Corpus {
        records: spontaneous
            .iter()
            .map(|r| UtteranceRecord {
                mel: None,
                ..(*r).clone()
            })
            .collect(),
    };

    let mut per_speaker: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &spontaneous {
        *per_speaker.entry(r.speaker.as_str()).or_insert(0) += 1;
    }
    let timbre_speaker = per_speaker
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(s, _)| s.to_string());
    let spon_timbre = Corpus {
        records: spontaneous
            .iter()
            .filter(|r| Some(r.speaker.as_str()) == timbre_speaker.as_deref())
            .take(timbre_size)
            .map(|r| (*r).clone())
            .collect(),
    };
    if spon_timbre.len() < timbre_size {
        warnings.push(format!(
            "SPON-TIMBRE has only {} of the requested {} utterances",
            spon_timbre.len(),
            timbre_size
        ));
    }

    Ok(AdaptationDatasets {
        spon_fp,
        spon_rhythm,
        spon_timbre,
        timbre_speaker,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, speaker: &str, phonemes: &str, style: Style) -> UtteranceRecord {
        let phonemes: Vec<String> = phonemes.split_whitespace().map(String::from).collect();
        let n = phonemes.len();
        UtteranceRecord {
            id: id.into(),
            speaker: speaker.into(),
            style,
            phonemes,
            durations: vec![2; n],
            pitch: vec![0.0; n],
            mel: None,
        }
    }

    #[test]
    fn validate_catches_length_mismatch() {
        let mut r = record("u0", "s", "a b c", Style::Reading);
        r.durations.pop();
        assert!(r.validate().is_err());
    }

    #[test]
    fn validate_catches_frame_mismatch() {
        let mut r = record("u0", "s", "a b", Style::Reading);
        r.mel = Some(Tensor::zeros(&[3, MEL_DIM]));
        assert!(r.validate().is_err());
        r.mel = Some(Tensor::zeros(&[4, MEL_DIM]));
        assert!(r.validate().is_ok());
    }

    #[test]
    fn all_fp_utterances_yield_full_spon_fp() {
        let corpus = Corpus {
            records: vec![
                record("u0", "s", "a <uh> b", Style::Spontaneous),
                record("u1", "s", "c <um> d", Style::Spontaneous),
            ],
        };
        let ds = build_adaptation_datasets(&corpus, 50).unwrap();
        assert_eq!(ds.spon_fp.len(), corpus.len());
        assert_eq!(ds.spon_rhythm.len(), 2);
    }

    #[test]
    fn fp_free_corpus_gives_empty_spon_fp_with_warning() {
        let corpus = Corpus {
            records: vec![record("u0", "s", "a b", Style::Spontaneous)],
        };
        let ds = build_adaptation_datasets(&corpus, 50).unwrap();
        assert!(ds.spon_fp.is_empty());
        assert_eq!(ds.spon_rhythm.len(), 1);
        assert!(ds.warnings.iter().any(|w| w.contains("SPON-FP is empty")));
    }

    #[test]
    fn timbre_takes_dominant_speaker() {
        let corpus = Corpus {
            records: vec![
                record("u0", "a", "x y", Style::Spontaneous),
                record("u1", "b", "x y", Style::Spontaneous),
                record("u2", "b", "x y", Style::Spontaneous),
            ],
        };
        let ds = build_adaptation_datasets(&corpus, 50).unwrap();
        assert_eq!(ds.timbre_speaker.as_deref(), Some("b"));
        assert_eq!(ds.spon_timbre.len(), 2);
    }

    #[test]
    fn corpus_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = record("u0", "s", "a b", Style::Reading);
        let mut mel = Tensor::zeros(&[4, MEL_DIM]);
        mel.data_mut()[3] = 1.25;
        r.mel = Some(mel);
        let corpus = Corpus { records: vec![r] };
        let manifest = corpus.save(dir.path(), "c").unwrap();
        assert_eq!(manifest.records, 1);
        let loaded = Corpus::load(&dir.path().join("c.jsonl")).unwrap();
        assert_eq!(loaded.records, corpus.records);
    }
}
