//! Checkpoint persistence: a JSON manifest with a named-tensor index plus
//! one raw blob of 32-bit little-endian float tensors at recorded offsets.
//! Save → load reproduces every tensor bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::buckets::SpeedBucketBoundaries;
use crate::error::{Error, Result};
use crate::model::{AcousticModel, ModelConfig, PitchStats, StageRecord, Vocab};
use crate::numerics::params::hex_string;
use crate::numerics::{AdamHyper, AdamOptimizer, AdamState, ParamSet, Scalar, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "blob.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len_bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Slot-aligned names of the parameters the optimizer was tracking.
    pub tracked: Vec<String>,
    pub step_counts: Vec<u64>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub vocab: Vec<String>,
    pub speakers: Vec<String>,
    pub pitch_stats: BTreeMap<String, PitchStats>,
    pub buckets: Option<SpeedBucketBoundaries>,
    pub stage_history: Vec<StageRecord>,
    pub seed: u64,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerManifest>,
    pub blob_sha256: String,
}

impl CheckpointManifest {
    /// Short identifier for metadata: the first 12 hex chars of the blob
    /// hash.
    pub fn checkpoint_id(&self) -> String {
        self.blob_sha256.chars().take(12).collect()
    }
}

pub struct LoadedCheckpoint<S: Scalar> {
    pub model: AcousticModel<S>,
    pub optimizer: Option<AdamOptimizer<S>>,
    pub manifest: CheckpointManifest,
    pub warnings: Vec<String>,
}

fn push_tensor<S: Scalar>(
    blob: &mut Vec<u8>,
    entries: &mut Vec<TensorEntry>,
    name: &str,
    t: &Tensor<S>,
) {
    let offset = blob.len() as u64;
    for v in t.data() {
        blob.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    entries.push(TensorEntry {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        offset,
        len_bytes: (t.numel() * 4) as u64,
    });
}

/// Writes `manifest.json` + `blob.bin` into `dir`.
pub fn save_checkpoint<S: Scalar>(
    model: &AcousticModel<S>,
    optimizer: Option<&AdamOptimizer<S>>,
    dir: &Path,
    seed: u64,
    config_hash: &str,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    for p in model.params.iter() {
        push_tensor(&mut blob, &mut tensors, &p.name, &p.value);
    }
    let optimizer_manifest = optimizer.map(|opt| {
        let mut entries = Vec::new();
        let mut tracked = Vec::new();
        let mut step_counts = Vec::new();
        for (slot, state) in &opt.states {
            let name = &model.params.by_slot(*slot).name;
            tracked.push(name.clone());
            step_counts.push(state.step_count);
            push_tensor(&mut blob, &mut entries, &format!("m.{name}"), &state.m);
            push_tensor(&mut blob, &mut entries, &format!("v.{name}"), &state.v);
        }
        OptimizerManifest {
            beta1: opt.hyper.beta1,
            beta2: opt.hyper.beta2,
            epsilon: opt.hyper.epsilon,
            learning_rate: opt.hyper.learning_rate,
            tracked,
            step_counts,
            tensors: entries,
        }
    });

    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        model_config: model.config.clone(),
        vocab: model.vocab.symbols().to_vec(),
        speakers: model.speakers.clone(),
        pitch_stats: model.pitch_stats.clone(),
        buckets: model.buckets,
        stage_history: model.stage_history.clone(),
        seed,
        config_hash: config_hash.to_string(),
        tensors,
        optimizer: optimizer_manifest,
        blob_sha256: hex_string(&Sha256::digest(&blob)),
    };
    fs::write(dir.join(BLOB_FILE), &blob)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

fn read_tensor<S: Scalar>(blob: &[u8], entry: &TensorEntry) -> Result<Tensor<S>> {
    let start = entry.offset as usize;
    let end = start + entry.len_bytes as usize;
    if end > blob.len() {
        return Err(Error::Integrity(format!(
            "checkpoint blob truncated at tensor {:?} (needs bytes {start}..{end}, blob has {})",
            entry.name,
            blob.len()
        )));
    }
    let numel: usize = entry.shape.iter().product();
    if numel * 4 != entry.len_bytes as usize {
        return Err(Error::Integrity(format!(
            "tensor {:?} shape {:?} disagrees with byte length {}",
            entry.name, entry.shape, entry.len_bytes
        )));
    }
    let data: Vec<S> = blob[start..end]
        .chunks_exact(4)
        .map(|c| S::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Tensor::new(entry.shape.clone(), data)
}

/// Reads a checkpoint directory back into a model (and optimizer state, when
/// present). `expected_config_hash` mismatches produce a warning, not an
/// error.
pub fn load_checkpoint<S: Scalar>(
    dir: &Path,
    expected_config_hash: Option<&str>,
) -> Result<LoadedCheckpoint<S>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(&manifest_path).map_err(|e| {
            Error::Integrity(format!("cannot read {}: {e}", manifest_path.display()))
        })?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let blob = fs::read(dir.join(BLOB_FILE))?;

    let mut params = ParamSet::new();
    for entry in &manifest.tensors {
        params.register(&entry.name, read_tensor::<S>(&blob, entry)?)?;
    }

    // Whole-blob digest check after per-tensor bounds checks, so truncation
    // reports the offending tensor by name.
    let digest = hex_string(&Sha256::digest(&blob));
    if digest != manifest.blob_sha256 {
        return Err(Error::Integrity(format!(
            "checkpoint blob digest mismatch: manifest {} vs blob {digest}",
            manifest.blob_sha256
        )));
    }

    let mut warnings = Vec::new();
    if let Some(expected) = expected_config_hash {
        if expected != manifest.config_hash {
            warnings.push(format!(
                "config hash mismatch: checkpoint was written with {}, current config resolves to {expected}",
                manifest.config_hash
            ));
        }
    }

    let mut vocab = Vocab::from_symbols(manifest.vocab.clone())?;
    vocab.reindex();

    let optimizer = match &manifest.optimizer {
        Some(om) => {
            let mut states = Vec::new();
            let mut by_name: BTreeMap<&str, &TensorEntry> = BTreeMap::new();
            for e in &om.tensors {
                by_name.insert(e.name.as_str(), e);
            }
            for (i, name) in om.tracked.iter().enumerate() {
                let slot = params.slot(name).ok_or_else(|| {
                    Error::Integrity(format!("optimizer tracks unknown parameter {name:?}"))
                })?;
                let m_entry = by_name.get(format!("m.{name}").as_str()).ok_or_else(|| {
                    Error::Integrity(format!("optimizer state m.{name} missing"))
                })?;
                let v_entry = by_name.get(format!("v.{name}").as_str()).ok_or_else(|| {
                    Error::Integrity(format!("optimizer state v.{name} missing"))
                })?;
                states.push((
                    slot,
                    AdamState {
                        m: read_tensor::<S>(&blob, m_entry)?,
                        v: read_tensor::<S>(&blob, v_entry)?,
                        step_count: om.step_counts[i],
                    },
                ));
            }
            Some(AdamOptimizer {
                hyper: AdamHyper {
                    beta1: om.beta1,
                    beta2: om.beta2,
                    epsilon: om.epsilon,
                    learning_rate: om.learning_rate,
                },
                states,
            })
        }
        None => None,
    };

    let model = AcousticModel {
        config: manifest.model_config.clone(),
        vocab,
        speakers: manifest.speakers.clone(),
        params,
        pitch_stats: manifest.pitch_stats.clone(),
        buckets: manifest.buckets,
        stage_history: manifest.stage_history.clone(),
    };

    Ok(LoadedCheckpoint {
        model,
        optimizer,
        manifest,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small_model() -> AcousticModel<f32> {
        let vocab = Vocab::build(["p00", "p01"]);
        AcousticModel::new(ModelConfig::tiny(), vocab, vec!["spk0".into()], 3).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = small_model();
        model.stage_history.push(StageRecord {
            stage: "source".into(),
            steps: 10,
            seed: 3,
        });
        let manifest = save_checkpoint(&model, None, dir.path(), 3, "abc").unwrap();
        assert_eq!(manifest.format_version, FORMAT_VERSION);
        let loaded = load_checkpoint::<f32>(dir.path(), Some("abc")).unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(
            loaded.model.params.value_hashes(),
            model.params.value_hashes()
        );
        assert_eq!(loaded.model.stage_history, model.stage_history);
        assert_eq!(loaded.model.vocab.symbols(), model.vocab.symbols());
    }

    #[test]
    fn truncated_blob_names_offending_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let model = small_model();
        save_checkpoint(&model, None, dir.path(), 0, "h").unwrap();
        let blob_path = dir.path().join(BLOB_FILE);
        let blob = std::fs::read(&blob_path).unwrap();
        std::fs::write(&blob_path, &blob[..blob.len() / 2]).unwrap();
        match load_checkpoint::<f32>(dir.path(), None).err() {
            Some(Error::Integrity(msg)) => assert!(msg.contains("truncated at tensor")),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn config_hash_mismatch_is_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let model = small_model();
        save_checkpoint(&model, None, dir.path(), 0, "old").unwrap();
        let loaded = load_checkpoint::<f32>(dir.path(), Some("new")).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        assert!(loaded.warnings[0].contains("config hash mismatch"));
    }

    #[test]
    fn optimizer_state_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let model = small_model();
        let slots: Vec<usize> = (0..3).collect();
        let mut opt = AdamOptimizer::new(AdamHyper::default(), &model.params, &slots);
        opt.states[0].1.step_count = 7;
        opt.states[0].1.m.data_mut()[0] = 0.5;
        save_checkpoint(&model, Some(&opt), dir.path(), 0, "h").unwrap();
        let loaded = load_checkpoint::<f32>(dir.path(), None).unwrap();
        let lopt = loaded.optimizer.unwrap();
        assert_eq!(lopt.states.len(), 3);
        assert_eq!(lopt.states[0].1.step_count, 7);
        assert_eq!(lopt.states[0].1.m.data()[0], 0.5);
    }
}
