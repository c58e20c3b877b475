//! Checkpoints: a JSON index of named tensors next to one blob of
//! little-endian f32 values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{ActorCritic, NetConfig};
use crate::env::ActionSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "iterseg-checkpoint-1";
pub const INDEX_FILE: &str = "model.json";
pub const BLOB_FILE: &str = "model.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Number of f32 values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format: String,
    pub net: NetConfig,
    pub actions: ActionSet,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

/// A network together with the action set its policy head indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: ActorCritic,
    pub actions: ActionSet,
}

impl Checkpoint {
    pub fn new(net: ActorCritic, actions: ActionSet) -> Result<Self> {
        if net.config().num_actions != actions.len() {
            return Err(Error::Config(format!(
                "policy head has {} outputs but the action set has {}",
                net.config().num_actions,
                actions.len()
            )));
        }
        Ok(Self { net, actions })
    }

    /// Serialises into `(index json, blob bytes)`.
    pub fn to_bytes(&self) -> Result<(String, Vec<u8>)> {
        let mut blob = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in self.net.params() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset: blob.len(),
                len: t.numel(),
            });
            for &v in t.data() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let index = CheckpointIndex {
            format: CHECKPOINT_FORMAT.to_string(),
            net: self.net.config().clone(),
            actions: self.actions.clone(),
            blob: BLOB_FILE.to_string(),
            tensors,
        };
        Ok((serde_json::to_string_pretty(&index)?, blob))
    }

    pub fn from_bytes(index_json: &str, blob: &[u8]) -> Result<Self> {
        let index: CheckpointIndex = serde_json::from_str(index_json)?;
        let bad = |reason: String| Error::format(INDEX_FILE, reason);
        if index.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown format {:?}", index.format)));
        }
        // Values are overwritten below; the rng only fixes shapes.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = ActorCritic::random(index.net.clone(), &mut rng)?;
        let names: Vec<(String, Vec<usize>)> = net.params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if names.len() != index.tensors.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                names.len(),
                index.tensors.len()
            )));
        }
        for ((name, shape), (entry, tensor)) in names.iter().zip(index.tensors.iter().zip(net.params_mut())) {
            if &entry.name != name || &entry.shape != shape || entry.len != tensor.numel() {
                return Err(bad(format!("tensor {} does not match {name} {shape:?}", entry.name)));
            }
            let end = entry.offset + 4 * entry.len;
            let bytes = blob
                .get(entry.offset..end)
                .ok_or_else(|| Error::format(BLOB_FILE, format!("{} runs past the blob end", entry.name)))?;
            for (dst, chunk) in tensor.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
            }
        }
        Self::new(net, index.actions)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (index, blob) = self.to_bytes()?;
        let index_path = dir.join(INDEX_FILE);
        fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        let index = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let blob_path = dir.join(BLOB_FILE);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Self::from_bytes(&index, &blob)
    }
}
