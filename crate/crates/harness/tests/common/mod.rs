#![allow(dead_code)]

use sharpmin::config::{ClassificationSpec, DataConfig, RunSection, TextData};
use sharpmin::RunConfig;
use sharpmin_core::models::{LinearSoftmaxConfig, MlpConfig, Nonlinearity, TransformerConfig};
use sharpmin_core::optim::{AdamConfig, LrSchedule, OptimizerConfig, SamConfig, SamVariant};
use sharpmin_core::ModelConfig;

pub fn quiet_run(steps: u64) -> RunSection {
    RunSection {
        steps,
        eval_every: 10,
        wall_time: false,
        ..RunSection::default()
    }
}

/// A one-block byte model on a small generated corpus.
pub fn tiny_lm(steps: u64) -> RunConfig {
    RunConfig {
        model: ModelConfig::Transformer(TransformerConfig {
            depth: 1,
            heads: 2,
            width: 16,
            mlp_dim: 64,
            vocab: 256,
            seq_len: 16,
            nonlinearity: Nonlinearity::Gelu,
        }),
        optimizer: OptimizerConfig::Adamw(AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        }),
        schedule: LrSchedule::default(),
        sam: SamConfig::default(),
        data: DataConfig::Text(TextData {
            synthetic_bytes: 40_000,
            batch_size: 8,
            seq_len: 16,
            eval_batches: 4,
            ..TextData::default()
        }),
        run: quiet_run(steps),
    }
}

pub fn small_classes() -> ClassificationSpec {
    ClassificationSpec {
        train_examples: 256,
        eval_examples: 128,
        dim: 4,
        classes: 3,
        separation: 3.0,
        data_seed: 1,
        batch_size: 16,
    }
}

/// 4 -> [8, 8] -> 3 GeLU network, 139 parameters.
pub fn tiny_mlp(steps: u64) -> RunConfig {
    RunConfig {
        model: ModelConfig::Mlp(MlpConfig {
            input_dim: 4,
            hidden: vec![8, 8],
            classes: 3,
            nonlinearity: Nonlinearity::Gelu,
        }),
        optimizer: OptimizerConfig::Adamw(AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        }),
        schedule: LrSchedule::default(),
        sam: SamConfig::default(),
        data: DataConfig::Classification(small_classes()),
        run: quiet_run(steps),
    }
}

pub fn linear_softmax(steps: u64) -> RunConfig {
    RunConfig {
        model: ModelConfig::LinearSoftmax(LinearSoftmaxConfig { input_dim: 4, classes: 3 }),
        ..tiny_mlp(steps)
    }
}

pub fn with_sam(mut cfg: RunConfig, variant: SamVariant, rho: f64) -> RunConfig {
    cfg.sam = SamConfig::new(variant, rho);
    cfg
}
