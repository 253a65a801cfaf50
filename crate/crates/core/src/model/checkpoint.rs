//! Checkpoint archive: magic, length-prefixed JSON manifest, then every
//! parameter tensor as little-endian `f32` in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Model, ModelConfig};
use super::params::ParamStore;
use super::tensor::{Mat, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ZCKPT001";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Byte offset from the start of the tensor section.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    seed: u64,
    step: usize,
    loss_history: Vec<f64>,
    tensors: Vec<TensorEntry>,
}

/// A model together with its training position.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub step: usize,
    pub loss_history: Vec<f64>,
}

pub fn encode_checkpoint<T: Real>(model: &Model<T>, step: usize, loss_history: &[f64]) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors = model
        .params
        .names()
        .iter()
        .zip(model.params.tensors())
        .map(|(name, t)| {
            let e = TensorEntry { name: name.clone(), shape: [t.rows, t.cols], offset };
            offset += t.data.len() * 4;
            e
        })
        .collect();
    let manifest = Manifest {
        version: 1,
        config: model.cfg.clone(),
        seed: model.params.seed,
        step,
        loss_history: loss_history.to_vec(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params.tensors() {
        for v in &t.data {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize.checked_add(len).filter(|&e| e <= bytes.len());
    let body_start = body_start.ok_or_else(|| Error::Format("checkpoint manifest truncated".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..body_start])?;
    if manifest.version != 1 {
        return Err(Error::Format(format!("unsupported checkpoint version {}", manifest.version)));
    }
    let body = &bytes[body_start..];
    let mut store = ParamStore::<f32>::new(manifest.seed);
    for e in &manifest.tensors {
        let n = e.shape[0] * e.shape[1];
        let raw = body
            .get(e.offset..e.offset + n * 4)
            .ok_or_else(|| Error::Format(format!("tensor {} truncated", e.name)))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        store.add(e.name.clone(), Mat::from_vec(e.shape[0], e.shape[1], data));
    }
    store.check_finite()?;
    let model = Model::with_params(manifest.config, store)?;
    Ok(Checkpoint { model, step: manifest.step, loss_history: manifest.loss_history })
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &Model<T>, step: usize, loss_history: &[f64]) -> Result<()> {
    let bytes = encode_checkpoint(model, step, loss_history)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
