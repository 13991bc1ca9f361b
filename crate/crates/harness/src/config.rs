//! Run configuration: one JSON document with `model`, `optimizer`,
//! `schedule`, `sam`, `data` and `run` sections. Unknown keys anywhere are
//! rejected; omitted keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sharpmin_core::data::BYTE_VOCAB;
use sharpmin_core::models::{MlpConfig, Nonlinearity, TransformerConfig};
use sharpmin_core::optim::{LrSchedule, OptimizerConfig, SamConfig, TrainerConfig};
use sharpmin_core::{Error, ModelConfig, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub sam: SamConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    Text(TextData),
    Classification(ClassificationSpec),
}

/// Byte-level language modelling on a file, or on generated text when no
/// path is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextData {
    pub path: Option<PathBuf>,
    /// Length of the generated corpus used when `path` is absent.
    pub synthetic_bytes: usize,
    pub synthetic_seed: u64,
    pub eval_fraction: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Cap on the number of eval batches.
    pub eval_batches: usize,
}

impl Default for TextData {
    fn default() -> Self {
        TextData {
            path: None,
            synthetic_bytes: 1 << 20,
            synthetic_seed: 0,
            eval_fraction: 0.1,
            batch_size: 32,
            seq_len: 128,
            eval_batches: 64,
        }
    }
}

/// Gaussian clusters; the eval set is a second independent draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationSpec {
    pub train_examples: usize,
    pub eval_examples: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    pub data_seed: u64,
    pub batch_size: usize,
}

impl Default for ClassificationSpec {
    fn default() -> Self {
        ClassificationSpec {
            train_examples: 4096,
            eval_examples: 1024,
            dim: 32,
            classes: 10,
            separation: 3.0,
            data_seed: 0,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub steps: u64,
    /// 0 evaluates only at the end.
    pub eval_every: u64,
    /// 0 disables the sharpness decomposition.
    pub diag_every: u64,
    /// 0 disables Hessian statistics during training.
    pub hessian_every: u64,
    /// 0 writes a checkpoint only at the end.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Record wall-clock milliseconds per step. Off makes metrics files
    /// byte-identical across repeated runs.
    pub wall_time: bool,
    pub probe_batch_size: Option<usize>,
    pub hessian: HessianOptions,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            steps: 1000,
            eval_every: 100,
            diag_every: 0,
            hessian_every: 0,
            checkpoint_every: 0,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            wall_time: true,
            probe_batch_size: None,
            hessian: HessianOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HessianOptions {
    pub power_iters: usize,
    pub tol: f64,
    pub trace_samples: usize,
}

impl Default for HessianOptions {
    fn default() -> Self {
        HessianOptions {
            power_iters: 100,
            tol: 1e-4,
            trace_samples: 50,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            optimizer: self.optimizer.clone(),
            schedule: self.schedule.clone(),
            sam: self.sam.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.trainer().validate()?;
        match (&self.data, &self.model) {
            (DataConfig::Text(t), ModelConfig::Transformer(m)) => {
                if m.vocab != BYTE_VOCAB {
                    return Err(Error::Config(format!("byte corpora need vocab {BYTE_VOCAB}, model has {}", m.vocab)));
                }
                if t.seq_len == 0 || t.seq_len > m.seq_len {
                    return Err(Error::Config(format!(
                        "data seq_len {} must lie in 1..={}",
                        t.seq_len, m.seq_len
                    )));
                }
                if t.batch_size == 0 || t.eval_batches == 0 {
                    return Err(Error::Config("batch_size and eval_batches must be positive".into()));
                }
                if t.path.is_none() && t.synthetic_bytes == 0 {
                    return Err(Error::Config("text data needs a path or synthetic_bytes > 0".into()));
                }
            }
            (DataConfig::Classification(c), ModelConfig::Mlp(_) | ModelConfig::LinearSoftmax(_)) => {
                let (input, classes) = match &self.model {
                    ModelConfig::Mlp(m) => (m.input_dim, m.classes),
                    ModelConfig::LinearSoftmax(m) => (m.input_dim, m.classes),
                    ModelConfig::Transformer(_) => unreachable!(),
                };
                if input != c.dim || classes != c.classes {
                    return Err(Error::Config(format!(
                        "model expects {input} features and {classes} classes, data has {} and {}",
                        c.dim, c.classes
                    )));
                }
                if c.batch_size == 0 || c.train_examples == 0 || c.eval_examples == 0 {
                    return Err(Error::Config("classification sizes must be positive".into()));
                }
            }
            _ => return Err(Error::Config("text data needs a transformer; classification data needs an mlp or linear_softmax model".into())),
        }
        if self.run.steps == 0 {
            return Err(Error::Config("run.steps must be positive".into()));
        }
        if self.run.probe_batch_size == Some(0) {
            return Err(Error::Config("run.probe_batch_size must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the model section, which fixes the parameter layout a
    /// checkpoint must match.
    pub fn model_hash(&self) -> String {
        model_hash(&self.model)
    }

    /// Small byte-level language model on generated text.
    pub fn desk_lm() -> Self {
        RunConfig {
            model: ModelConfig::Transformer(TransformerConfig::default()),
            optimizer: OptimizerConfig::default(),
            schedule: LrSchedule::default(),
            sam: SamConfig::default(),
            data: DataConfig::Text(TextData::default()),
            run: RunSection::default(),
        }
    }

    /// MLP on Gaussian clusters.
    pub fn desk_classifier() -> Self {
        let spec = ClassificationSpec::default();
        RunConfig {
            model: ModelConfig::Mlp(MlpConfig {
                input_dim: spec.dim,
                hidden: vec![64, 64],
                classes: spec.classes,
                nonlinearity: Nonlinearity::Gelu,
            }),
            optimizer: OptimizerConfig::default(),
            schedule: LrSchedule::default(),
            sam: SamConfig::default(),
            data: DataConfig::Classification(spec),
            run: RunSection::default(),
        }
    }
}

pub fn model_hash(model: &ModelConfig) -> String {
    let canonical = serde_json::to_string(model).expect("model serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
