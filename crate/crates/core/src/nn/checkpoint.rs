//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                          |
//! |--------------|--------------------------------------------------|
//! | 8            | magic `MTRKCKPT`                                 |
//! | 4            | format version (`u32`, currently 1)              |
//! | 4            | header length `H` (`u32`)                        |
//! | H            | UTF-8 JSON [`CheckpointHeader`] (config echo)    |
//! | 4 * count    | parameters in declaration order, `f32`           |
//!
//! A pretty-printed copy of the header is written next to the checkpoint
//! with a `.json` extension appended.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use super::NnError;

pub const MAGIC: &[u8; 8] = b"MTRKCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub epochs_completed: u32,
    pub param_count: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(model: &Model<f32>, epochs_completed: u32) -> Vec<u8> {
    let header = CheckpointHeader {
        model: model.config.clone(),
        epochs_completed,
        param_count: model.num_params() as u64,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Model<f32>, CheckpointHeader), NnError> {
    let fmt = |m: &str| NnError::Format(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fmt("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| fmt("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| NnError::Format(format!("header: {e}")))?;
    let mut model = Model::<f32>::new(header.model.clone())?;
    if model.num_params() as u64 != header.param_count {
        return Err(fmt("parameter count does not match the model config"));
    }
    let payload = &bytes[16 + hlen..];
    if payload.len() != 4 * model.num_params() {
        return Err(NnError::Format(format!(
            "expected {} parameter bytes, found {}",
            4 * model.num_params(),
            payload.len()
        )));
    }
    let mut chunks = payload.chunks_exact(4);
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = f32::from_le_bytes(chunks.next().expect("sized").try_into().expect("4 bytes"));
        }
    }
    Ok((model, header))
}

pub fn save(path: &Path, model: &Model<f32>, epochs_completed: u32) -> Result<(), NnError> {
    let bytes = encode(model, epochs_completed);
    fs::write(path, &bytes)?;
    let header = CheckpointHeader {
        model: model.config.clone(),
        epochs_completed,
        param_count: model.num_params() as u64,
    };
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&header).expect("header serializes"),
    )?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model<f32>, CheckpointHeader), NnError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model<f32> {
        Model::new(ModelConfig {
            point_widths: vec![8, 16],
            head_hidden: 8,
            init_seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = model();
        save(&path, &m, 7).unwrap();
        let (back, header) = load(&path).unwrap();
        assert_eq!(header.epochs_completed, 7);
        for (a, b) in m.params().iter().zip(back.params()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert!(sidecar_path(&path).exists());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&model(), 0);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(decode(&bad), Err(NnError::Format(m)) if m.contains("version")));
    }
}
