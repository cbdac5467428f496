//! Checkpoint files.
//!
//! ```text
//! DKCKPT1\n
//! {"model":{...ModelConfig...},"param_count":N,"dtype":"f32le","epoch":E}\n
//! N little-endian f32 parameters, in layout order
//! ```
//!
//! Layout order is the order of [`super::layout`]: for each convolution, its weights
//! `[cout][cin][tap]` followed by its `cout` biases.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layout, ModelConfig, Network};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"DKCKPT1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub param_count: usize,
    pub dtype: String,
    /// Epoch the parameters come from; 0 for an untrained network.
    pub epoch: usize,
}

pub fn encode_checkpoint(net: &Network<f32>, epoch: usize) -> Vec<u8> {
    let header = CheckpointHeader {
        model: net.config.clone(),
        param_count: net.params.len(),
        dtype: "f32le".into(),
        epoch,
    };
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
    out.push(b'\n');
    for p in &net.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Network<f32>, CheckpointHeader)> {
    let fail = |reason: String| Error::Format {
        what: "checkpoint".into(),
        reason,
    };
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC)
        .ok_or_else(|| fail("bad magic".into()))?;
    let nl = rest
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| fail("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..nl]).map_err(|e| fail(format!("header: {e}")))?;
    if header.dtype != "f32le" {
        return Err(fail(format!("unsupported dtype {}", header.dtype)));
    }
    header.model.validate()?;
    let (_, expected) = layout(&header.model);
    if expected != header.param_count {
        return Err(fail(format!(
            "header says {} parameters, model layout needs {expected}",
            header.param_count
        )));
    }
    let blob = &rest[nl + 1..];
    if blob.len() != 4 * expected {
        return Err(fail(format!("expected {} parameter bytes, found {}", 4 * expected, blob.len())));
    }
    let mut net = Network::<f32>::zeros(header.model.clone())?;
    for (p, chunk) in net.params.iter_mut().zip(blob.chunks_exact(4)) {
        *p = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
    }
    Ok((net, header))
}

pub fn write_checkpoint(path: impl AsRef<Path>, net: &Network<f32>, epoch: usize) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(net, epoch)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(Network<f32>, CheckpointHeader)> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Network::<f32>::new(ModelConfig::default(), 5).unwrap();
        let bytes = encode_checkpoint(&net, 12);
        let (back, header) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(header.epoch, 12);
        assert_eq!(back, net);
        assert_eq!(encode_checkpoint(&back, 12), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let net = Network::<f32>::new(ModelConfig::default(), 5).unwrap();
        let bytes = encode_checkpoint(&net, 0);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"NOPE\n{}\n").is_err());
        let mut wrong = bytes.clone();
        wrong[3] = b'X';
        assert!(decode_checkpoint(&wrong).is_err());
    }
}
