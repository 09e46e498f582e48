//! Self-describing checkpoint files: an 8-byte magic, a little-endian u64
//! manifest length, a JSON manifest, then raw little-endian f32 blocks in
//! manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{ParamStore, Tensor};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::nmt::NmtModel;
use crate::pretrain::HdrModel;
use crate::transformer::ModelConfig;

pub const MAGIC: &[u8; 8] = b"HDRNMTCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Pre-training encoder with its sentence-pair head.
    Hdr,
    Nmt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub seed: u64,
    pub config: ModelConfig,
    pub src_vocab: Vocab,
    #[serde(default)]
    pub tgt_vocab: Option<Vocab>,
    /// Sentence-pair head reads `[|a-b| ; a ; b]`.
    #[serde(default)]
    pub concat_features: bool,
    pub tensors: Vec<TensorEntry>,
}

/// A manifest and the parameters it describes.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub store: ParamStore,
}

impl Checkpoint {
    fn build(
        kind: ModelKind,
        seed: u64,
        config: &ModelConfig,
        src_vocab: &Vocab,
        tgt_vocab: Option<&Vocab>,
        concat_features: bool,
        store: &ParamStore,
    ) -> Self {
        let mut offset = 0;
        let tensors = store
            .iter()
            .map(|(_, p)| {
                let e = TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    offset,
                    frozen: p.frozen,
                };
                offset += p.value.len() * 4;
                e
            })
            .collect();
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                kind,
                seed,
                config: config.clone(),
                src_vocab: src_vocab.clone(),
                tgt_vocab: tgt_vocab.cloned(),
                concat_features,
                tensors,
            },
            store: store.clone(),
        }
    }

    pub fn from_nmt(model: &NmtModel, seed: u64) -> Self {
        Self::build(
            ModelKind::Nmt,
            seed,
            &model.config,
            &model.src_vocab,
            Some(&model.tgt_vocab),
            false,
            &model.store,
        )
    }

    pub fn from_hdr(model: &HdrModel, seed: u64) -> Self {
        Self::build(
            ModelKind::Hdr,
            seed,
            &model.config,
            &model.vocab,
            None,
            model.head.concat,
            &model.store,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest =
            serde_json::to_vec(&self.manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload: usize = self.store.num_scalars() * 4;
        let mut out = Vec::with_capacity(16 + manifest.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, p) in self.store.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if mlen > body.len() {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])
            .map_err(|e| Error::Checkpoint(format!("corrupt manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let payload = &body[mlen..];
        let mut store = ParamStore::new();
        let mut expected = 0;
        for t in &manifest.tensors {
            let n: usize = t.shape.iter().product();
            if t.offset != expected {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has offset {} (expected {expected})",
                    t.name, t.offset
                )));
            }
            let end = t.offset + n * 4;
            if end > payload.len() {
                return Err(bad("truncated payload"));
            }
            let data = payload[t.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let value =
                Tensor::new(&t.shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if store.id(&t.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", t.name)));
            }
            let id = store.add(t.name.clone(), value);
            store.get_mut(id).frozen = t.frozen;
            expected = end;
        }
        if expected != payload.len() {
            return Err(bad("payload size does not match manifest"));
        }
        Ok(Checkpoint { manifest, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuild a translation model; every parameter must match by name and shape.
    pub fn into_nmt(self) -> Result<NmtModel> {
        if self.manifest.kind != ModelKind::Nmt {
            return Err(Error::Checkpoint(
                "checkpoint does not hold a translation model".into(),
            ));
        }
        let tgt = self
            .manifest
            .tgt_vocab
            .clone()
            .ok_or_else(|| Error::Checkpoint("missing target vocabulary".into()))?;
        let mut model = NmtModel::new(
            self.manifest.config.clone(),
            self.manifest.src_vocab.clone(),
            tgt,
            0,
        )?;
        assign_exact(&mut model.store, &self.store)?;
        Ok(model)
    }

    pub fn into_hdr(self) -> Result<HdrModel> {
        if self.manifest.kind != ModelKind::Hdr {
            return Err(Error::Checkpoint(
                "checkpoint does not hold a pre-training encoder".into(),
            ));
        }
        let mut model = HdrModel::new(
            self.manifest.config.clone(),
            self.manifest.src_vocab.clone(),
            self.manifest.concat_features,
            0,
        )?;
        assign_exact(&mut model.store, &self.store)?;
        Ok(model)
    }
}

/// Copy every value and frozen flag of `src` into `dst`; both stores must
/// hold the same names with the same shapes.
fn assign_exact(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            src.len(),
            dst.len()
        )));
    }
    for p in dst.iter_mut() {
        let q = src
            .by_name(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
        if q.value.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: {:?} vs {:?}",
                p.name,
                q.value.shape(),
                p.value.shape()
            )));
        }
        p.value = q.value.clone();
        p.frozen = q.frozen;
    }
    Ok(())
}

pub fn save_nmt(model: &NmtModel, seed: u64, path: &Path) -> Result<()> {
    Checkpoint::from_nmt(model, seed).save(path)
}

pub fn load_nmt(path: &Path) -> Result<NmtModel> {
    Checkpoint::load(path)?.into_nmt()
}

pub fn save_hdr(model: &HdrModel, seed: u64, path: &Path) -> Result<()> {
    Checkpoint::from_hdr(model, seed).save(path)
}

pub fn load_hdr(path: &Path) -> Result<HdrModel> {
    Checkpoint::load(path)?.into_hdr()
}
