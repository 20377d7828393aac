//! Binary checkpoints: magic, a length-prefixed JSON header, then raw
//! little-endian f64 tensors (parameters in registration order, followed by
//! optimizer moment buffers).

use std::fs;
use std::path::Path;

use egodoa_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::network::{Model, ModelConfig};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::{Mat, ParamStore};
use crate::train::{TrainConfig, TrainState};

const MAGIC: &[u8; 8] = b"EGOCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: ModelConfig,
    optimizer: OptimizerConfig,
    optimizer_steps: u64,
    train: TrainConfig,
    state: TrainState,
    tensors: Vec<TensorEntry>,
    slots: Vec<[usize; 2]>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Optimizer,
    pub train_config: TrainConfig,
    pub state: TrainState,
}

fn put(buf: &mut Vec<u8>, m: &Mat) {
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.params();
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model.config().clone(),
            optimizer: self.optimizer.config().clone(),
            optimizer_steps: self.optimizer.steps(),
            train: self.train_config.clone(),
            state: self.state.clone(),
            tensors: params
                .iter()
                .map(|(n, m)| TensorEntry {
                    name: n.to_string(),
                    shape: [m.nrows(), m.ncols()],
                })
                .collect(),
            slots: self.optimizer.slots().iter().map(|m| [m.nrows(), m.ncols()]).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::with_capacity(16 + json.len() + 8 * 2 * params.scalar_count());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, m) in params.iter() {
            put(&mut buf, m);
        }
        for m in self.optimizer.slots() {
            put(&mut buf, m);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::format(path, format!("checkpoint header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {}", header.version)));
        }
        let mut off = 12 + hlen;
        let mut take = |shape: [usize; 2]| -> Result<Mat> {
            let n = shape[0] * shape[1];
            let raw = bytes
                .get(off..off + 8 * n)
                .ok_or_else(|| bad("truncated tensor data"))?;
            off += 8 * n;
            let vals = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(Mat::from_shape_vec((shape[0], shape[1]), vals).expect("shape matches length"))
        };
        let mut params = ParamStore::new();
        for t in &header.tensors {
            let m = take(t.shape)?;
            params.add(&t.name, m);
        }
        let mut slots = Vec::with_capacity(header.slots.len());
        for s in &header.slots {
            slots.push(take(*s)?);
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let model = Model::from_params(header.model, params)?;
        let optimizer = Optimizer::from_state(header.optimizer, model.params(), slots, header.optimizer_steps)?;
        Ok(Self {
            model,
            optimizer,
            train_config: header.train,
            state: header.state,
        })
    }

    /// Writes through a temporary file and renames into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
