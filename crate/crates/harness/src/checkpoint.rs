//! Checkpoint files: one line of compact JSON header, a `\n`, then every
//! parameter as little-endian f32 in flattening order (entries sorted by
//! name, row-major within an entry).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sharpmin_core::{Error, ModelConfig, ParamVector, Result, Tensor};

pub const FORMAT: &str = "sharpmin-checkpoint";
pub const VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    /// SHA-256 of the model section the parameters belong to.
    pub config_hash: String,
    /// Completed updates when the file was written.
    pub step: u64,
    pub entries: Vec<EntryHeader>,
}

impl CheckpointHeader {
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum()
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Config(format!("checkpoint rejected: {}", msg.into()))
}

/// The exact bytes [`save_checkpoint`] writes.
pub fn encode(params: &ParamVector<f32>, config_hash: &str, step: u64) -> Vec<u8> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        dtype: DTYPE.into(),
        config_hash: config_hash.into(),
        step,
        entries: params
            .iter()
            .map(|(name, t)| EntryHeader {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(4 * params.len());
    for (_, t) in params.iter() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Parses and validates a whole file before building anything, so a bad
/// file never yields partial parameters.
pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, ParamVector<f32>)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("no header terminator"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(corrupt(format!("unsupported format {} v{}", header.format, header.version)));
    }
    if header.dtype != DTYPE {
        return Err(corrupt(format!("unsupported dtype {}", header.dtype)));
    }
    let blob = &bytes[split + 1..];
    if blob.len() != 4 * header.param_count() {
        return Err(corrupt(format!(
            "payload holds {} bytes, header describes {}",
            blob.len(),
            4 * header.param_count()
        )));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut params = ParamVector::new();
    for e in &header.entries {
        let n = e.shape.iter().product();
        let data: Vec<f32> = values.by_ref().take(n).collect();
        if params.get(&e.name).is_some() {
            return Err(corrupt(format!("duplicate entry {}", e.name)));
        }
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
    }
    let names: Vec<&str> = params.names().collect();
    if !header.entries.iter().map(|e| e.name.as_str()).eq(names) {
        return Err(corrupt("entries are not in flattening order"));
    }
    Ok((header, params))
}

/// Writes atomically via a sibling temporary file.
pub fn save_checkpoint(path: &Path, params: &ParamVector<f32>, config_hash: &str, step: u64) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode(params, config_hash, step)).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Loads a checkpoint and checks it against `model` and its hash.
pub fn load_checkpoint(path: &Path, model: &ModelConfig, config_hash: &str) -> Result<(CheckpointHeader, ParamVector<f32>)> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (header, params) = decode(&bytes)?;
    if header.config_hash != config_hash {
        return Err(corrupt(format!(
            "written for model {}, loading into {config_hash}",
            header.config_hash
        )));
    }
    model.check_params(&params)?;
    Ok((header, params))
}
