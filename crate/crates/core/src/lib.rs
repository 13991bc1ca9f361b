//! Sharpness-aware minimization and its logit/functional decomposition on a
//! small differentiable engine.

pub mod autodiff;
pub mod curvature;
pub mod data;
pub mod error;
pub mod loss;
pub mod models;
pub mod objective;
pub mod optim;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testing;

pub use data::Batch;
pub use error::{Error, Result};
pub use models::{ModelConfig, ModelEvaluation, Problem};
pub use objective::Objective;
pub use tensor::{ParamVector, Real, Tensor};
