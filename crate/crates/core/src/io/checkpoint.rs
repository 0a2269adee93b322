use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::BridgeSchedule;
use crate::denoiser::{parameter_count, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"P2PB";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Facts about the run that produced a checkpoint. Wall-clock time is left
/// out so identical runs give identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub steps: usize,
    pub seed: u64,
    pub final_loss: f64,
    /// Factor applied to centered training patches. Inference divides
    /// centered patch coordinates by the same value.
    pub patch_scale: f64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta { steps: 0, seed: 0, final_loss: 0.0, patch_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub denoiser: DenoiserConfig,
    pub schedule: BridgeSchedule,
    pub param_count: usize,
    pub training: TrainingMeta,
}

impl CheckpointHeader {
    pub fn new(denoiser: DenoiserConfig, schedule: BridgeSchedule, training: TrainingMeta) -> Result<Self> {
        denoiser.validate()?;
        schedule.validate()?;
        Ok(CheckpointHeader { denoiser, schedule, param_count: parameter_count(&denoiser), training })
    }
}

/// Layout: magic `P2PB`, u32 LE version, u32 LE header length, UTF-8 JSON
/// header, then every parameter as an f32 LE in canonical layer order.
/// Values are rounded to f32, so a second save of a loaded model is
/// byte-identical to the first.
pub fn save_checkpoint(params: &DenoiserParams, header: &CheckpointHeader, path: &Path) -> Result<()> {
    if header.denoiser != params.config {
        return Err(Error::Checkpoint("header architecture differs from the parameters".into()));
    }
    if header.param_count != params.len() {
        return Err(Error::Checkpoint(format!(
            "header declares {} parameters but {} were given",
            header.param_count,
            params.len()
        )));
    }
    let json = serde_json::to_vec(header)?;
    let json_len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * params.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    for &v in &params.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    super::write_bytes(path, &out)
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserParams, CheckpointHeader)> {
    let bytes = super::read_bytes(path)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<(DenoiserParams, CheckpointHeader)> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < 12 {
        return Err(bad(format!("file is {} bytes, shorter than the fixed preamble", bytes.len())));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("version {version} is not supported (expected {CHECKPOINT_VERSION})")));
    }
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json_end = 12usize.checked_add(json_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("header runs past end of file".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..json_end])?;
    header.denoiser.validate()?;
    let expected = parameter_count(&header.denoiser);
    if header.param_count != expected {
        return Err(bad(format!(
            "header declares {} parameters but its architecture implies {expected}",
            header.param_count
        )));
    }
    let payload = &bytes[json_end..];
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(bad(format!(
            "payload holds {} floats, expected {expected}",
            payload.len() as f64 / 4.0
        )));
    }
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let params = DenoiserParams::from_values(header.denoiser, values)?;
    header.schedule.validate()?;
    Ok((params, header))
}
