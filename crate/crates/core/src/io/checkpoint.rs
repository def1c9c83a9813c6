//! Network checkpoints: architecture, parameters, and the training
//! configuration echo needed to evaluate the model the way it was trained.

use std::path::Path;

use super::{push_f64, push_f64_slice, push_string, push_u32, Reader};
use crate::error::{FormatError, Result};
use crate::gat::{GatConfig, GatNetwork};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const CHECKPOINT_MAGIC: &str = "GFCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// A reloadable training artifact.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: GatNetwork,
    pub train_config: TrainConfig,
    /// Best validation macro-F1 seen during training (NaN encoded as-is
    /// never occurs; absent validation stores -1).
    pub best_val_f1: f64,
    pub best_epoch: u32,
}

/// Serializes and atomically writes a checkpoint.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    push_u32(&mut buf, CHECKPOINT_VERSION);
    let c = &ckpt.net.config;
    for v in [c.input_dim, c.hidden_channels, c.heads, c.layers, c.classes] {
        push_u32(&mut buf, v as u32);
    }
    let params = ckpt.net.params();
    push_u32(&mut buf, params.len() as u32);
    for p in params {
        push_u32(&mut buf, p.rows() as u32);
        push_u32(&mut buf, p.cols() as u32);
        push_f64_slice(&mut buf, p.data());
    }
    let echo = serde_json::to_string(&ckpt.train_config).expect("train config serializes");
    push_string(&mut buf, &echo);
    push_f64(&mut buf, ckpt.best_val_f1);
    push_u32(&mut buf, ckpt.best_epoch);
    super::atomic_write(path, &buf)
}

/// Loads a checkpoint; reloaded parameters reproduce bit-identical logits.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader::new(std::io::BufReader::new(file));

    let mut magic = [0u8; 6];
    r.read_exact(&mut magic, "magic")?;
    if magic != CHECKPOINT_MAGIC.as_bytes() {
        return Err(
            FormatError::BadMagic { expected: CHECKPOINT_MAGIC, found: magic.to_vec() }.into()
        );
    }
    let version = r.read_u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(
            FormatError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION }.into()
        );
    }
    let config = GatConfig {
        input_dim: r.read_u32("input dim")? as usize,
        hidden_channels: r.read_u32("hidden channels")? as usize,
        heads: r.read_u32("heads")? as usize,
        layers: r.read_u32("layers")? as usize,
        classes: r.read_u32("classes")? as usize,
    };
    let n_params = r.read_u32("parameter count")? as usize;
    if n_params > 1 << 20 {
        return Err(r.corrupt(format!("implausible parameter count {n_params}")));
    }
    let mut tensors = Vec::with_capacity(n_params);
    for i in 0..n_params {
        let rows = r.read_u32(&format!("parameter {i}: rows"))? as usize;
        let cols = r.read_u32(&format!("parameter {i}: cols"))? as usize;
        if rows * cols > 1 << 26 {
            return Err(r.corrupt(format!("parameter {i}: implausible shape {rows}x{cols}")));
        }
        let data = r.read_f64_vec(rows * cols, &format!("parameter {i}: data"))?;
        tensors.push(Tensor::from_vec(rows, cols, data)?);
    }
    let echo = r.read_string("train config echo")?;
    let train_config: TrainConfig = serde_json::from_str(&echo)
        .map_err(|e| r.corrupt(format!("train config echo: {e}")))?;
    let best_val_f1 = r.read_f64("best val f1")?;
    let best_epoch = r.read_u32("best epoch")?;

    let net = GatNetwork::from_params(config, tensors)?;
    Ok(Checkpoint { net, train_config, best_val_f1, best_epoch })
}
