//! Curvature of the training loss: the full Hessian `H_L`, its Gauss-Newton
//! part `H_GGN` and the functional remainder `H_func = H_L - H_GGN`, the
//! logit/functional split of the sharpness gradient, spectral estimators and
//! dense oracles.

mod dense;
mod rmt;
mod spectral;

pub use dense::{dense_hessian_oracle, dense_loss_hessian, dense_matrix, DenseHessians, DENSE_ORACLE_LIMIT};
pub use rmt::{precondition_ratios, rmt_precondition_demo, RmtReport, RmtTrial};
pub use spectral::{hessian_stats, hutchinson_trace, lambda_max, HessianStats, PowerIteration, TraceEstimate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelEvaluation, Problem};
use crate::tensor::{ParamVector, Real};

/// A symmetric linear map on flat f64 vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

impl LinearOperator for nalgebra::DMatrix<f64> {
    fn dim(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.ncols() {
            return Err(Error::shape("matrix operator", &[self.ncols()], &[v.len()]));
        }
        Ok((self * nalgebra::DVector::from_column_slice(v)).data.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureKind {
    FullHessian,
    Ggn,
    Functional,
}

/// One of the three curvature matrices at a fixed point and batch. The
/// forward pass is recorded once and reused by every product.
pub struct CurvatureOperator<T: Real> {
    kind: CurvatureKind,
    eval: ModelEvaluation<T>,
}

impl<T: Real> CurvatureOperator<T> {
    pub fn new(problem: &Problem<'_>, params: &ParamVector<T>, kind: CurvatureKind) -> Result<Self> {
        Ok(CurvatureOperator {
            kind,
            eval: problem.evaluate(params)?,
        })
    }

    pub fn kind(&self) -> CurvatureKind {
        self.kind
    }

    pub fn evaluation(&self) -> &ModelEvaluation<T> {
        &self.eval
    }

    pub fn apply_params(&self, v: &ParamVector<T>) -> Result<ParamVector<T>> {
        match self.kind {
            CurvatureKind::FullHessian => self.eval.hvp(v),
            CurvatureKind::Ggn => self.eval.ggn_vp(v),
            CurvatureKind::Functional => self.eval.functional_vp(v),
        }
    }
}

impl<T: Real> LinearOperator for CurvatureOperator<T> {
    fn dim(&self) -> usize {
        self.eval.graph().layout().len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let v = self.eval.graph().layout().unflatten_f64(v)?;
        Ok(self.apply_params(&v)?.to_f64_vec())
    }
}

/// `H_L v`.
pub fn full_hvp<T: Real>(problem: &Problem<'_>, params: &ParamVector<T>, v: &ParamVector<T>) -> Result<ParamVector<T>> {
    problem.evaluate(params)?.hvp(v)
}

/// `H_GGN v = J^T H_F J v`, with `H_F` the logit-space loss Hessian.
pub fn ggn_hvp<T: Real>(problem: &Problem<'_>, params: &ParamVector<T>, v: &ParamVector<T>) -> Result<ParamVector<T>> {
    problem.evaluate(params)?.ggn_vp(v)
}

/// `H_func v`, from the contraction of the frozen logit gradient with the
/// network output. Equals `H_L v - H_GGN v`.
pub fn functional_hvp<T: Real>(problem: &Problem<'_>, params: &ParamVector<T>, v: &ParamVector<T>) -> Result<ParamVector<T>> {
    CurvatureOperator::new(problem, params, CurvatureKind::Functional)?.apply_params(v)
}

/// Default floor on `||grad L||` below which the normalized gradient is
/// undefined.
pub const GRAD_NORM_GUARD: f64 = 1e-12;

/// Split of the sharpness gradient `H_L e` along `e = grad L / ||grad L||`
/// into its logit path `H_GGN e` and functional path `H_func e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub step: u64,
    /// Radius the record was taken for; the fractions do not depend on it.
    pub rho: f64,
    pub grad_norm: f64,
    pub delta_logit_norm: f64,
    pub delta_func_norm: f64,
    pub inner: f64,
    pub tau_logit: f64,
    pub tau_func: f64,
    pub tau_cross: f64,
    pub sharpness_grad_norm: f64,
}

impl DecompositionRecord {
    pub fn tau_sum(&self) -> f64 {
        self.tau_logit + self.tau_func + self.tau_cross
    }
}

/// Computes the decomposition on `problem` at `params`. Fails with
/// [`Error::DegenerateGradient`] when `||grad L|| <= guard`.
pub fn sharpness_decomposition<T: Real>(
    problem: &Problem<'_>,
    params: &ParamVector<T>,
    rho: f64,
    step: u64,
    guard: f64,
) -> Result<DecompositionRecord> {
    let eval = problem.evaluate(params)?;
    let grad = eval.gradient()?;
    let grad_norm = grad.norm();
    if grad_norm <= guard {
        return Err(Error::DegenerateGradient { norm: grad_norm, guard });
    }
    let direction = grad.scaled(T::of(1.0 / grad_norm));
    let delta_logit = eval.ggn_vp(&direction)?;
    let delta_func = eval.functional_vp(&direction)?;
    Ok(decompose(step, rho, grad_norm, &delta_logit, &delta_func))
}

/// Fractions from the two paths. The squared norm of their sum is expanded
/// so that the three fractions add to one up to rounding.
pub fn decompose<T: Real>(
    step: u64,
    rho: f64,
    grad_norm: f64,
    delta_logit: &ParamVector<T>,
    delta_func: &ParamVector<T>,
) -> DecompositionRecord {
    let ll = delta_logit.dot(delta_logit);
    let ff = delta_func.dot(delta_func);
    let lf = delta_logit.dot(delta_func);
    let total = ll + ff + 2.0 * lf;
    let (tau_logit, tau_func, tau_cross) = if total > 0.0 {
        (ll / total, ff / total, 2.0 * lf / total)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    DecompositionRecord {
        step,
        rho,
        grad_norm,
        delta_logit_norm: ll.sqrt(),
        delta_func_norm: ff.sqrt(),
        inner: lf,
        tau_logit,
        tau_func,
        tau_cross,
        sharpness_grad_norm: total.max(0.0).sqrt(),
    }
}
