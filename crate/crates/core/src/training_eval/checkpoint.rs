use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::context_fields::Model;
use crate::corpus::{LabelMap, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"VWERC1";

/// A trained model with everything needed to rebuild and evaluate it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub labels: LabelMap,
    pub model: Model,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: TrainConfig,
    vocab: Vocabulary,
    labels: LabelMap,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// `VWERC1`, a u64 little-endian manifest length, the JSON manifest, then
    /// every tensor as little-endian f32 in manifest order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            labels: self.labels.clone(),
            tensors: self
                .model
                .store
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 4 * self.model.store.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.model.store.iter() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let integrity = |m: &str| Error::Integrity(m.to_string());
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| integrity("bad magic bytes"))?;
        if rest.len() < 8 {
            return Err(integrity("truncated header"));
        }
        let (len, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("eight bytes"));
        let len = usize::try_from(len).map_err(|_| integrity("manifest length overflows"))?;
        if rest.len() < len {
            return Err(integrity("truncated manifest"));
        }
        let (json, mut payload) = rest.split_at(len);
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| Error::Integrity(format!("manifest: {e}")))?;
        manifest.config.validate()?;
        let mut model = Model::new(
            manifest.config.model.clone(),
            manifest.vocab.len(),
            manifest.labels.len(),
            manifest.config.seed,
        )?;
        let ids: Vec<_> = model.store.ids().collect();
        if ids.len() != manifest.tensors.len() {
            return Err(Error::Integrity(format!(
                "manifest lists {} tensors, configuration implies {}",
                manifest.tensors.len(),
                ids.len()
            )));
        }
        for (id, entry) in ids.into_iter().zip(&manifest.tensors) {
            if model.store.name(id) != entry.name || model.store.get(id).shape() != entry.shape.as_slice() {
                return Err(Error::Integrity(format!(
                    "tensor {} {:?} does not match the configuration",
                    entry.name, entry.shape
                )));
            }
            let n: usize = entry.shape.iter().product();
            if payload.len() < 4 * n {
                return Err(Error::Integrity(format!("payload truncated in {}", entry.name)));
            }
            let (chunk, tail) = payload.split_at(4 * n);
            payload = tail;
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
                .collect();
            model.store.set(id, Tensor::new(entry.shape.clone(), data)?)?;
        }
        if !payload.is_empty() {
            return Err(Error::Integrity(format!("{} trailing bytes", payload.len())));
        }
        Ok(Self {
            config: manifest.config,
            vocab: manifest.vocab,
            labels: manifest.labels,
            model,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
