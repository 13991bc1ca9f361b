use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sharpmin_core::curvature::{DecompositionRecord, HessianStats};
use sharpmin_core::{Error, Result};

/// One line of `metrics.jsonl`. Step 0 describes the initialization and
/// carries no training statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    /// Norm of the SAM-family direction handed to the optimizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_grad_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped_perturbation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionRecord>,
    /// Why a scheduled decomposition was not recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition_skipped: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hessian: Option<HessianStats>,
}

/// Appends one JSON object per line, flushing after each so a crash leaves
/// a readable prefix.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|source| Error::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Reads a metrics file back, checking every line parses and the steps
/// increase strictly.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records: Vec<MetricsRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let r: MetricsRecord =
            serde_json::from_str(line).map_err(|e| Error::Config(format!("metrics line {}: {e}", i + 1)))?;
        if let Some(prev) = records.last() {
            if r.step <= prev.step {
                return Err(Error::Config(format!("metrics line {}: step {} after {}", i + 1, r.step, prev.step)));
            }
        }
        records.push(r);
    }
    Ok(records)
}
