//! Shipped workloads: a decoder-only transformer language model, an MLP
//! classifier and a linear-softmax model whose logits are linear in the
//! parameters.

mod evaluation;
mod linear;
mod mlp;
mod transformer;

pub use evaluation::{ModelEvaluation, Problem};
pub use linear::LinearSoftmaxConfig;
pub use mlp::MlpConfig;
pub use transformer::TransformerConfig;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, UnaryFn, Var};
use crate::data::{step_rng, Batch};
use crate::error::{Error, Result};
use crate::tensor::{ParamVector, Real, Tensor};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Gelu,
    Relu,
}

impl Nonlinearity {
    pub(crate) fn unary(self) -> UnaryFn {
        match self {
            Nonlinearity::Gelu => UnaryFn::Gelu,
            Nonlinearity::Relu => UnaryFn::Relu,
        }
    }
}

/// What an entry is, which fixes its initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    /// Matrix `[fan_in, fan_out]`; truncated normal with std `1/sqrt(fan_in)`.
    Weight { fan_in: usize },
    Bias,
    /// Layer-norm gain, initialized to one.
    Gain,
    /// Lookup table with rows of width `m`; normal with std `1/sqrt(m)`.
    Embedding,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntrySpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: EntryKind,
}

impl EntrySpec {
    pub(crate) fn new(name: impl Into<String>, shape: &[usize], kind: EntryKind) -> Self {
        EntrySpec {
            name: name.into(),
            shape: shape.to_vec(),
            kind,
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A workload together with its architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    Transformer(TransformerConfig),
    Mlp(MlpConfig),
    LinearSoftmax(LinearSoftmaxConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Transformer(c) => c.validate(),
            ModelConfig::Mlp(c) => c.validate(),
            ModelConfig::LinearSoftmax(c) => c.validate(),
        }
    }

    /// Every parameter entry, sorted by name.
    pub fn entries(&self) -> Vec<EntrySpec> {
        let mut e = match self {
            ModelConfig::Transformer(c) => c.entries(),
            ModelConfig::Mlp(c) => c.entries(),
            ModelConfig::LinearSoftmax(c) => c.entries(),
        };
        e.sort_by(|a, b| a.name.cmp(&b.name));
        e
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Transformer(c) => c.vocab,
            ModelConfig::Mlp(c) => c.classes,
            ModelConfig::LinearSoftmax(c) => c.classes,
        }
    }

    pub fn param_count(&self) -> usize {
        self.entries().iter().map(EntrySpec::size).sum()
    }

    /// Parameters outside the token and position lookup tables.
    pub fn non_embedding_param_count(&self) -> usize {
        self.entries()
            .iter()
            .filter(|e| e.kind != EntryKind::Embedding)
            .map(EntrySpec::size)
            .sum()
    }

    /// Names of the weight matrices, the entries eligible for pruning.
    pub fn weight_matrix_names(&self) -> Vec<String> {
        self.entries()
            .into_iter()
            .filter(|e| matches!(e.kind, EntryKind::Weight { .. }))
            .map(|e| e.name)
            .collect()
    }

    /// Deterministic initialization drawn in f64 and rounded to `T`, so the
    /// f32 and f64 initializations agree up to rounding.
    pub fn init<T: Real>(&self, seed: u64) -> ParamVector<T> {
        let mut rng = step_rng(seed, 0);
        self.entries()
            .into_iter()
            .map(|e| {
                let n = e.size();
                let data: Vec<f64> = match e.kind {
                    EntryKind::Bias => vec![0.0; n],
                    EntryKind::Gain => vec![1.0; n],
                    EntryKind::Weight { fan_in } => {
                        let std = 1.0 / (fan_in as f64).sqrt();
                        (0..n).map(|_| std * truncated_normal(&mut rng)).collect()
                    }
                    EntryKind::Embedding => {
                        let std = 1.0 / (*e.shape.last().expect("embedding rank") as f64).sqrt();
                        (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
                    }
                };
                let t = Tensor::new(e.shape, data.into_iter().map(T::of).collect()).expect("entry shape");
                (e.name, t)
            })
            .collect()
    }

    /// Rejects parameter vectors whose names or shapes differ from the model.
    pub fn check_params<T: Real>(&self, params: &ParamVector<T>) -> Result<()> {
        let entries = self.entries();
        if entries.len() != params.num_entries() {
            return Err(Error::Layout(format!(
                "model has {} entries, parameters have {}",
                entries.len(),
                params.num_entries()
            )));
        }
        for (spec, (name, t)) in entries.iter().zip(params.iter()) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::Layout(format!(
                    "expected `{}` {:?}, found `{}` {:?}",
                    spec.name,
                    spec.shape,
                    name,
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `g` and returns the logits: `[batch, seq,
    /// vocab]` for token batches, `[batch, classes]` for feature batches.
    pub fn logits<T: Real>(&self, g: &mut Graph<T>, batch: &Batch) -> Result<Var> {
        match self {
            ModelConfig::Transformer(c) => c.logits(g, batch),
            ModelConfig::Mlp(c) => c.logits(g, batch),
            ModelConfig::LinearSoftmax(c) => c.logits(g, batch),
        }
    }
}

/// Standard normal conditioned on `|z| <= 2`.
fn truncated_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Features of a classification batch as a graph constant.
fn feature_input<T: Real>(g: &mut Graph<T>, batch: &Batch, input_dim: usize) -> Result<Var> {
    match batch {
        Batch::Features {
            features, batch, dim, ..
        } => {
            if *dim != input_dim {
                return Err(Error::shape("feature batch", &[*batch, input_dim], &[*batch, *dim]));
            }
            let x = Tensor::new(vec![*batch, *dim], features.iter().map(|&v| T::of(v)).collect())?;
            Ok(g.constant(x))
        }
        Batch::Tokens { .. } => Err(Error::Config("classifier given a token batch".into())),
    }
}

/// `x @ W + b` for entries `{prefix}weight`-style names.
fn dense<T: Real>(g: &mut Graph<T>, x: Var, weight: &str, bias: &str) -> Result<Var> {
    let w = g.param(weight)?;
    let b = g.param(bias)?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}
