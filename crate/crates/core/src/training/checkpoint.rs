//! Checkpoint layout, in order:
//!
//! 1. magic `IMTXCKPT` (8 bytes)
//! 2. format version, `u32` little-endian
//! 3. header length in bytes, `u64` little-endian
//! 4. UTF-8 JSON header ([`Header`])
//! 5. every parameter tensor in header order, `f64` little-endian
//! 6. Adam first moments, same order and sizes
//! 7. Adam second moments, same order and sizes

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::TrainConfig;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{CaptionModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IMTXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where training stands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub xe_epochs_done: usize,
    pub rl_epochs_done: usize,
    pub steps: u64,
    pub skipped_empty: u64,
    /// Rate of the last cross-entropy epoch run.
    pub last_xe_lr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    vocab: Vocabulary,
    progress: Progress,
    adam_t: u64,
    params: Vec<ParamEntry>,
    /// How the region mean enters the LSTM input.
    mean_projection: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: CaptionModel,
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub adam: Adam,
    pub progress: Progress,
}

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let store = &ckpt.model.store;
    let cfg = &ckpt.model.config;
    let header = Header {
        model: cfg.clone(),
        train: ckpt.train.clone(),
        vocab: ckpt.vocab.clone(),
        progress: ckpt.progress.clone(),
        adam_t: ckpt.adam.t,
        params: store
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        mean_projection: if cfg.decoder.projects_mean() {
            format!("linear {}x{} (dec.mean_proj)", cfg.decoder.d_model, cfg.decoder.d_lstm)
        } else {
            "identity".to_string()
        },
    };
    let json = serde_json::to_vec(&header)?;
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let blocks = store
            .tensors()
            .iter()
            .map(|t| t.data())
            .chain(ckpt.adam.m.iter().map(Vec::as_slice))
            .chain(ckpt.adam.v.iter().map(Vec::as_slice));
        for block in blocks {
            for x in block {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn take<'a>(path: &Path, bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(bad(path, "truncated file"));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_f64s(path: &Path, bytes: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    let raw = take(path, bytes, n * 8)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut raw = Vec::new();
    fs::File::open(path)?.read_to_end(&mut raw)?;
    let mut bytes = raw.as_slice();
    if take(path, &mut bytes, 8)? != CHECKPOINT_MAGIC {
        return Err(bad(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(path, &mut bytes, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(take(path, &mut bytes, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(take(path, &mut bytes, len)?).map_err(|e| bad(path, format!("header: {e}")))?;

    let mut model = CaptionModel::new(header.model.clone(), 0)?;
    let expected: Vec<ParamEntry> = model
        .store
        .iter()
        .map(|(name, t)| ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    if expected != header.params {
        return Err(bad(path, "parameter layout does not match the stored configuration"));
    }
    for t in model.store.tensors_mut() {
        let vals = read_f64s(path, &mut bytes, t.numel())?;
        t.data_mut().copy_from_slice(&vals);
    }
    let mut adam = Adam::new(header.train.adam, &model.store);
    adam.t = header.adam_t;
    for block in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        let vals = read_f64s(path, &mut bytes, block.len())?;
        block.copy_from_slice(&vals);
    }
    if !bytes.is_empty() {
        return Err(bad(path, format!("{} trailing bytes", bytes.len())));
    }
    Ok(Checkpoint {
        model,
        train: header.train,
        vocab: header.vocab,
        adam,
        progress: header.progress,
    })
}
