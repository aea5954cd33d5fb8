//! Flat binary checkpoints: `"SSRPNET"`, the 32-byte config digest, then
//! every tensor as little-endian `f32` in declaration order. Running
//! batch-norm statistics follow each block's `β`; momentum buffers are not
//! stored. A JSON sidecar carries epoch, seed and the full config.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::params::{init_params, NetworkParams};
use super::train::TrainState;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"SSRPNET";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub config: NetworkConfig,
    pub config_digest: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn tensors(params: &NetworkParams) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = Vec::new();
    for b in &params.blocks {
        out.extend([
            b.kernel.value.as_slice(),
            &b.bias.value,
            &b.gamma.value,
            &b.beta.value,
            &b.running_mean,
            &b.running_var,
        ]);
    }
    out.extend([
        params.hidden.weight.value.as_slice(),
        &params.hidden.bias.value,
        &params.output.weight.value,
        &params.output.bias.value,
    ]);
    out
}

fn tensors_mut(params: &mut NetworkParams) -> Vec<&mut Vec<f64>> {
    let mut out: Vec<&mut Vec<f64>> = Vec::new();
    for b in &mut params.blocks {
        out.extend([
            &mut b.kernel.value,
            &mut b.bias.value,
            &mut b.gamma.value,
            &mut b.beta.value,
            &mut b.running_mean,
            &mut b.running_var,
        ]);
    }
    out.extend([
        &mut params.hidden.weight.value,
        &mut params.hidden.bias.value,
        &mut params.output.weight.value,
        &mut params.output.bias.value,
    ]);
    out
}

pub fn write_params<W: Write>(params: &NetworkParams, mut w: W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&params.config.digest())?;
    for t in tensors(params) {
        for &v in t {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

/// Reads tensors for `config`; the stored digest must match it.
pub fn read_params<R: Read>(mut r: R, config: &NetworkConfig) -> Result<NetworkParams> {
    let ser = |e: std::io::Error| Error::Serialization(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(ser)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Serialization("not an SSRPNET checkpoint".into()));
    }
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest).map_err(ser)?;
    if digest != config.digest() {
        return Err(Error::Serialization(
            "checkpoint was written for a different network configuration".into(),
        ));
    }
    let mut params = init_params(config, 0)?;
    let mut buf = [0u8; 4];
    for t in tensors_mut(&mut params) {
        for v in t.iter_mut() {
            r.read_exact(&mut buf).map_err(ser)?;
            *v = f32::from_le_bytes(buf) as f64;
        }
    }
    if r.read(&mut buf).map_err(ser)? != 0 {
        return Err(Error::Serialization("trailing bytes after the last tensor".into()));
    }
    if params.blocks.iter().flat_map(|b| &b.running_var).any(|v| !(*v >= 0.0)) {
        return Err(Error::Serialization("negative running variance in checkpoint".into()));
    }
    Ok(params)
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("ssrpnet"), stem.with_extension("json"))
}

/// Writes `<stem>.ssrpnet` and `<stem>.json`.
pub fn save_checkpoint(state: &TrainState, stem: impl AsRef<Path>) -> Result<()> {
    let (bin, json) = paths(stem.as_ref());
    let file = std::fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
    write_params(&state.params, std::io::BufWriter::new(file)).map_err(|e| Error::io(&bin, e))?;
    let meta = CheckpointMeta {
        epoch: state.epoch,
        seed: state.rng_seed,
        config: state.params.config.clone(),
        config_digest: hex(&state.params.config.digest()),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
}

pub fn load_checkpoint(stem: impl AsRef<Path>) -> Result<TrainState> {
    let (bin, json) = paths(stem.as_ref());
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
    if meta.config_digest != hex(&meta.config.digest()) {
        return Err(Error::Serialization("checkpoint metadata digest does not match its config".into()));
    }
    let file = std::fs::File::open(&bin).map_err(|e| Error::io(&bin, e))?;
    let params = read_params(std::io::BufReader::new(file), &meta.config)?;
    let mut state = TrainState::new(params, meta.seed);
    state.epoch = meta.epoch;
    Ok(state)
}
