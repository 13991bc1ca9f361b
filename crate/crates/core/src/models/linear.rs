use serde::{Deserialize, Serialize};

use super::{dense, feature_input, EntryKind, EntrySpec};
use crate::autodiff::{Graph, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Logits `x @ weight + bias`: linear in the parameters, so the functional
/// part of its loss Hessian is identically zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSoftmaxConfig {
    pub input_dim: usize,
    pub classes: usize,
}

impl LinearSoftmaxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 {
            return Err(Error::Config("linear-softmax dims must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn entries(&self) -> Vec<EntrySpec> {
        vec![
            EntrySpec::new("bias", &[self.classes], EntryKind::Bias),
            EntrySpec::new(
                "weight",
                &[self.input_dim, self.classes],
                EntryKind::Weight { fan_in: self.input_dim },
            ),
        ]
    }

    pub(crate) fn logits<T: Real>(&self, g: &mut Graph<T>, batch: &Batch) -> Result<Var> {
        let x = feature_input(g, batch, self.input_dim)?;
        dense(g, x, "weight", "bias")
    }
}
