//! Checkpoint files.
//!
//! ```text
//! "LVCK" | version u8 | header_len u32 | JSON header | params f64... | [adam m f64... | adam v f64...]
//! ```
//! Parameters are stored in registration order; the header lists every name
//! and shape so a checkpoint cannot be loaded into a different architecture.

use std::path::Path;

use lvc_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Model, ModelConfig};
use crate::train::optim::Adam;

pub const MAGIC: [u8; 4] = *b"LVCK";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    /// Number of completed training steps.
    pub step: u64,
    pub optimizer: Option<Adam>,
    /// Free-form metadata, usually the training configuration.
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    meta: serde_json::Value,
    params: Vec<(String, [usize; 4])>,
    /// Adam step counter and moments follow the parameters when present.
    adam: Option<AdamHeader>,
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::InvalidInput(format!("bad checkpoint: {}", reason.into()))
}

impl Checkpoint {
    pub fn from_model(model: Model) -> Self {
        Checkpoint {
            model,
            step: 0,
            optimizer: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.model.config,
            step: self.step,
            meta: self.meta.clone(),
            params: self.model.store.iter().map(|(n, t)| (n.to_string(), t.shape())).collect(),
            adam: self.optimizer.as_ref().map(|a| AdamHeader {
                t: a.t,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
            }),
            fingerprint: hex::encode(self.model.fingerprint()),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |ts: &[Tensor]| {
            for t in ts {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        put(self.model.store.values());
        if let Some(a) = &self.optimizer {
            put(&a.m);
            put(&a.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || bytes[..4] != MAGIC {
            return Err(bad("wrong magic number"));
        }
        if bytes[4] != VERSION {
            return Err(bad(format!("unsupported version {}", bytes[4])));
        }
        let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let json = bytes.get(9..9 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(e.to_string()))?;
        let mut model = Model::new(header.config, 0)?;
        let names: Vec<(String, [usize; 4])> = model.store.iter().map(|(n, t)| (n.to_string(), t.shape())).collect();
        if names != header.params {
            let first = names
                .iter()
                .zip(&header.params)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{a:?} vs stored {b:?}"))
                .unwrap_or_else(|| format!("{} vs stored {} tensors", names.len(), header.params.len()));
            return Err(bad(format!("architecture differs: {first}")));
        }
        let mut body = &bytes[9 + len..];
        let mut take = |shape: [usize; 4]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            if body.len() < n * 8 {
                return Err(bad("truncated tensor data"));
            }
            let data = body[..n * 8].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            body = &body[n * 8..];
            Ok(Tensor::new(shape, data))
        };
        let ids: Vec<_> = model.store.ids().collect();
        for (id, (_, shape)) in ids.iter().zip(&header.params) {
            let t = take(*shape)?;
            model.store.set(*id, t);
        }
        let optimizer = match &header.adam {
            Some(a) => {
                let m = header.params.iter().map(|(_, s)| take(*s)).collect::<Result<Vec<_>>>()?;
                let v = header.params.iter().map(|(_, s)| take(*s)).collect::<Result<Vec<_>>>()?;
                Some(Adam {
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: a.eps,
                    t: a.t,
                    m,
                    v,
                })
            }
            None => None,
        };
        if !body.is_empty() {
            return Err(bad(format!("{} trailing bytes", body.len())));
        }
        let found = hex::encode(model.fingerprint());
        if found != header.fingerprint {
            return Err(Error::CheckpointMismatch {
                expected: header.fingerprint,
                found,
            });
        }
        Ok(Checkpoint {
            model,
            step: header.step,
            optimizer,
            meta: header.meta,
        })
    }

    /// Writes through a temporary file so an interrupted save never leaves a
    /// half-written checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
