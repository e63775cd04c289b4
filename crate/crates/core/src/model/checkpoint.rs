//! Binary checkpoint format: magic, little-endian `u32` version,
//! little-endian `u64` header length, a JSON header, then every parameter
//! followed by every state value as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classifier, ModelConfig, ModelError};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"RDSA-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    trained: bool,
    parameters: usize,
    state: usize,
    layers: Vec<LayerOffsets>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerOffsets {
    weights: usize,
    biases: usize,
    gamma: Option<usize>,
    beta: Option<usize>,
    running_mean: Option<usize>,
    running_var: Option<usize>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(model: &Classifier<T>, mut w: W) -> Result<(), ModelError> {
    let header = Header {
        config: model.config.clone(),
        trained: model.trained,
        parameters: model.params.len(),
        state: model.state.len(),
        layers: model
            .layout
            .iter()
            .map(|l| LayerOffsets {
                weights: l.weights,
                biases: l.biases,
                gamma: l.norm.map(|n| n.gamma),
                beta: l.norm.map(|n| n.beta),
                running_mean: l.norm.map(|n| n.running_mean),
                running_var: l.norm.map(|n| n.running_var),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in model.params.iter().chain(&model.state) {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Classifier<T>, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| bad("truncated header length"))?;
    let len = u64::from_le_bytes(b8) as usize;
    if len > 1 << 26 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut values = Vec::with_capacity(header.parameters + header.state);
    for _ in 0..header.parameters + header.state {
        r.read_exact(&mut b8).map_err(|_| bad("truncated parameter block"))?;
        values.push(T::from_f64_lossy(f64::from_le_bytes(b8)));
    }
    if r.read(&mut b8)? != 0 {
        return Err(bad("trailing bytes after parameter block"));
    }
    let state = values.split_off(header.parameters);
    let model = Classifier::from_raw(header.config, values, state, header.trained)?;
    let consistent = model.layout.len() == header.layers.len()
        && model.layout.iter().zip(&header.layers).all(|(l, h)| {
            l.weights == h.weights
                && l.biases == h.biases
                && l.norm.map(|n| n.gamma) == h.gamma
                && l.norm.map(|n| n.beta) == h.beta
                && l.norm.map(|n| n.running_mean) == h.running_mean
                && l.norm.map(|n| n.running_var) == h.running_var
        });
    if !consistent {
        return Err(bad("layer offsets do not match the configuration"));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &Classifier<T>, path: &Path) -> Result<(), ModelError> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Classifier<T>, ModelError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
