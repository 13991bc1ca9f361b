use serde::{Deserialize, Serialize};

use super::{dense, feature_input, EntryKind, EntrySpec, Nonlinearity};
use crate::autodiff::{Graph, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Fully connected classifier: `hidden.len()` nonlinear layers then a
/// linear readout. Layer `i` owns `layers.{i}.weight` and `layers.{i}.bias`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Config("MLP needs at least one hidden layer".into()));
        }
        if self.input_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.classes);
        w
    }

    pub(crate) fn entries(&self) -> Vec<EntrySpec> {
        self.widths()
            .windows(2)
            .enumerate()
            .flat_map(|(i, io)| {
                [
                    EntrySpec::new(format!("layers.{i}.weight"), &[io[0], io[1]], EntryKind::Weight { fan_in: io[0] }),
                    EntrySpec::new(format!("layers.{i}.bias"), &[io[1]], EntryKind::Bias),
                ]
            })
            .collect()
    }

    pub(crate) fn logits<T: Real>(&self, g: &mut Graph<T>, batch: &Batch) -> Result<Var> {
        let mut x = feature_input(g, batch, self.input_dim)?;
        let layers = self.hidden.len() + 1;
        for i in 0..layers {
            x = dense(g, x, &format!("layers.{i}.weight"), &format!("layers.{i}.bias"))?;
            if i + 1 < layers {
                x = g.unary(x, self.nonlinearity.unary());
            }
        }
        Ok(x)
    }
}
