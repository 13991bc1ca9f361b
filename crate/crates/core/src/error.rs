use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("unknown parameter entry `{0}`")]
    UnknownParam(String),

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("target index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("loss must reduce to a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("gradient norm {norm:e} is at or below the guard {guard:e}")]
    DegenerateGradient { norm: f64, guard: f64 },

    #[error("parameter count {count} exceeds the dense oracle limit of {limit}")]
    SizeGuard { count: usize, limit: usize },

    #[error("dense Hessian disagrees with finite differences: relative error {0:e}")]
    OracleMismatch(f64),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("singular matrix in dense solve")]
    Singular,

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
