use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{MatchModel, ModelConfig, ModelSpec};

pub const CHECKPOINT_JSON: &str = "checkpoint.json";
pub const CHECKPOINT_BIN: &str = "checkpoint.bin";

/// Location of one parameter tensor inside the weights blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in 32-bit floats.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_spec: String,
    pub arch: ModelConfig,
    pub epoch: usize,
    pub best_val_accuracy: f64,
    pub rng_seed: u64,
    /// Hex SHA-256 of the canonical JSON of the training configuration.
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// Hex SHA-256 of `value` serialized as JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Writes `checkpoint.json` and `checkpoint.bin` into `dir`. The tensor table
/// in `meta` is filled in from the model.
pub fn save_checkpoint(dir: &Path, model: &MatchModel<f32>, meta: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = meta.clone();
    meta.model_spec = model.spec.to_string();
    meta.arch = model.config.clone();
    meta.tensors.clear();
    let mut blob = Vec::with_capacity(model.count_parameters() * 4);
    let mut offset = 0;
    for p in model.params() {
        meta.tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
        });
        offset += p.len();
        for v in &p.value {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = dir.join(CHECKPOINT_BIN);
    fs::write(&bin, &blob).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(CHECKPOINT_JSON);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&json, e))?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn load_checkpoint_meta(dir: &Path) -> Result<CheckpointMeta> {
    let json = dir.join(CHECKPOINT_JSON);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&json, e))
}

/// Rebuilds the model recorded in `dir` and loads its weights.
pub fn load_checkpoint(dir: &Path) -> Result<(MatchModel<f32>, CheckpointMeta)> {
    let meta = load_checkpoint_meta(dir)?;
    let spec = ModelSpec::parse(&meta.model_spec)?;
    let mut model = MatchModel::<f32>::new(&spec, &meta.arch, meta.rng_seed)?;
    let bin = dir.join(CHECKPOINT_BIN);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = model.count_parameters() as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: bin,
            expected,
            found: bytes.len() as u64,
        });
    }
    let params = model.params_mut();
    if params.len() != meta.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "model has {} tensors, checkpoint lists {}",
            params.len(),
            meta.tensors.len()
        )));
    }
    for (p, entry) in params.into_iter().zip(&meta.tensors) {
        if p.name != entry.name || p.shape != entry.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match checkpoint entry `{}` {:?}",
                p.name, p.shape, entry.name, entry.shape
            )));
        }
        let raw = &bytes[entry.offset * 4..(entry.offset + p.len()) * 4];
        for (v, chunk) in p.value.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    Ok((model, meta))
}
