use crate::autodiff::{Graph, Var};
use crate::data::Batch;
use crate::error::Result;
use crate::loss;
use crate::objective::Objective;
use crate::tensor::{ParamVector, Real, Tensor};

use super::ModelConfig;

/// The network output `F(theta)` on one batch, recorded once and kept for
/// any number of Jacobian products at that point.
pub struct ModelEvaluation<T: Real> {
    graph: Graph<T>,
    logits: Var,
    loss: Var,
    /// `sum(G0 * F(theta))` with the logit gradient `G0` frozen at this
    /// point; its Hessian is the functional part of the loss Hessian.
    contraction: Var,
    targets: Vec<usize>,
}

impl<T: Real> ModelEvaluation<T> {
    pub fn new(model: &ModelConfig, params: &ParamVector<T>, batch: &Batch) -> Result<Self> {
        model.check_params(params)?;
        let mut graph = Graph::new(params);
        let logits = model.logits(&mut graph, batch)?;
        let loss = graph.cross_entropy(logits, batch.targets())?;
        let frozen = loss::ce_logit_grad(graph.value(logits), batch.targets())?;
        let frozen = graph.constant(frozen);
        let weighted = graph.mul(logits, frozen)?;
        let contraction = graph.sum_all(weighted);
        Ok(ModelEvaluation {
            graph,
            logits,
            loss,
            contraction,
            targets: batch.targets().to_vec(),
        })
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn logits(&self) -> &Tensor<T> {
        self.graph.value(self.logits)
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Mean cross-entropy.
    pub fn loss(&self) -> f64 {
        self.graph.value(self.loss).data()[0].as_f64()
    }

    /// `dL/dF` including the mean weighting, so `vjp(logit_gradient())`
    /// is the loss gradient.
    pub fn logit_gradient(&self) -> Result<Tensor<T>> {
        loss::ce_logit_grad(self.logits(), &self.targets)
    }

    /// `J^T u` for a logit-shaped cotangent.
    pub fn vjp(&self, cotangent: &Tensor<T>) -> Result<ParamVector<T>> {
        self.graph.vjp(self.logits, cotangent)
    }

    /// `J v` for a parameter-space tangent.
    pub fn jvp(&self, tangent: &ParamVector<T>) -> Result<Tensor<T>> {
        self.graph.jvp(self.logits, tangent)
    }

    pub fn gradient(&self) -> Result<ParamVector<T>> {
        self.graph.gradient(self.loss)
    }

    /// Full loss Hessian applied to `v`.
    pub fn hvp(&self, v: &ParamVector<T>) -> Result<ParamVector<T>> {
        self.graph.hvp(self.loss, v)
    }

    pub fn gradient_and_hvp(&self, v: &ParamVector<T>) -> Result<(ParamVector<T>, ParamVector<T>)> {
        self.graph.gradient_and_hvp(self.loss, v)
    }

    /// Functional Hessian product `sum_k G0_k Hess(F_k) v`, computed on its
    /// own rather than as a difference of the other two.
    pub fn functional_vp(&self, v: &ParamVector<T>) -> Result<ParamVector<T>> {
        self.graph.hvp(self.contraction, v)
    }

    /// Gauss-Newton product `J^T H_F J v` with `H_F` the logit-space Hessian.
    pub fn ggn_vp(&self, v: &ParamVector<T>) -> Result<ParamVector<T>> {
        let jv = self.jvp(v)?;
        let hjv = loss::ce_logit_hvp(self.logits(), &jv)?;
        self.vjp(&hjv)
    }
}

/// Mean cross-entropy of a model on a fixed batch, as a function of the
/// parameters.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub model: &'a ModelConfig,
    pub batch: &'a Batch,
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a ModelConfig, batch: &'a Batch) -> Self {
        Problem { model, batch }
    }

    pub fn evaluate<T: Real>(&self, params: &ParamVector<T>) -> Result<ModelEvaluation<T>> {
        ModelEvaluation::new(self.model, params, self.batch)
    }
}

impl<T: Real> Objective<T> for Problem<'_> {
    fn value_and_grad(&self, params: &ParamVector<T>) -> Result<(f64, ParamVector<T>)> {
        let e = self.evaluate(params)?;
        Ok((e.loss(), e.gradient()?))
    }

    fn hvp(&self, params: &ParamVector<T>, v: &ParamVector<T>) -> Result<ParamVector<T>> {
        self.evaluate(params)?.hvp(v)
    }
}
