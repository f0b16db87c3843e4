//! Versioned binary checkpoints.
//!
//! Layout: the magic bytes `CNCK`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header of that many bytes, then
//! every tensor as little-endian `f64` in header-table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, NetState};
use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::rng::Seed;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CNCK";

/// Seed and number of optimizer steps taken, enough to resume the run's
/// random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub encoder: Option<EncoderSpec>,
    pub state: NetState,
    pub rng: RngState,
    /// Free-form run metadata (loss weights, epoch, metrics).
    pub meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    encoder: Option<EncoderSpec>,
    tensors: Vec<TensorEntry>,
    rng: RngState,
    #[serde(default)]
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            encoder: self.encoder.clone(),
            tensors: self
                .state
                .tensor_table()
                .into_iter()
                .map(|(name, len)| TensorEntry { name, len })
                .collect(),
            rng: self.rng,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.state.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        self.state.visit(&mut |_, s, _| {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |m: String| Error::Input(format!("checkpoint {origin}: {m}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("version {version}, this build reads version {CHECKPOINT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        let mut state = NetState::init(&header.config, Seed(0))?;
        let table = state.tensor_table();
        let stored: Vec<(String, usize)> = header.tensors.iter().map(|t| (t.name.clone(), t.len)).collect();
        if table != stored {
            return Err(bad("tensor table does not match the configuration".into()));
        }
        let data = &bytes[16 + hlen..];
        let total: usize = table.iter().map(|t| t.1).sum();
        if data.len() != 8 * total {
            return Err(bad(format!("expected {} data bytes, found {}", 8 * total, data.len())));
        }
        let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        state.visit_mut(&mut |_, s, _| {
            for v in s.iter_mut() {
                *v = values.next().expect("length checked");
            }
        });
        Ok(Checkpoint {
            config: header.config,
            encoder: header.encoder,
            state,
            rng: header.rng,
            meta: header.meta,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, &path.display().to_string())
}
