//! Policy checkpoints.
//!
//! Layout: the 8-byte magic `SGDPOCKP`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header (model
//! hyperparameters, vocabulary bytes, tensor names and shapes) and then
//! every tensor's values as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sgdpo_core::autodiff::Tensor;
use sgdpo_core::policy::{ModelConfig, ModelParams, Vocab};

use crate::error::{io_err, LabError, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 8] = b"SGDPOCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    d_model: usize,
    n_layers: usize,
    d_ff: usize,
    context: usize,
    max_params: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelHeader,
    vocab_bytes: Vec<u8>,
    tensors: Vec<TensorHeader>,
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let c = params.config();
    let names = c.shapes(params.vocab().size());
    let header = Header {
        model: ModelHeader {
            d_model: c.d_model,
            n_layers: c.n_layers,
            d_ff: c.d_ff,
            context: c.context,
            max_params: c.max_params,
        },
        vocab_bytes: params.vocab().bytes().to_vec(),
        tensors: names
            .into_iter()
            .zip(params.tensors())
            .map(|((name, _), t)| TensorHeader {
                name,
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<ModelParams> {
    let bad = |msg: String| LabError::Checkpoint {
        path: origin.to_path_buf(),
        msg,
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
    let mut data = &body[hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for th in &header.tensors {
        let n: usize = th.shape.iter().product();
        if data.len() < 8 * n {
            return Err(bad(format!("truncated data in tensor {}", th.name)));
        }
        let values = data[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        data = &data[8 * n..];
        tensors.push(Tensor::new(th.shape.clone(), values)?);
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    let m = header.model;
    let config = ModelConfig {
        d_model: m.d_model,
        n_layers: m.n_layers,
        d_ff: m.d_ff,
        context: m.context,
        max_params: m.max_params,
    };
    let params =
        ModelParams::from_tensors(config, Vocab::from_bytes(&header.vocab_bytes), tensors)?;
    if params.vocab().bytes() != header.vocab_bytes.as_slice() {
        return Err(bad("vocabulary bytes must be sorted and distinct".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    write_atomic(path.as_ref(), &encode(params))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes, path)
}
