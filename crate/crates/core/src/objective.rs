use crate::error::Result;
use crate::tensor::{ParamVector, Real};

/// A twice-differentiable scalar function of the parameters.
pub trait Objective<T: Real> {
    fn value_and_grad(&self, params: &ParamVector<T>) -> Result<(f64, ParamVector<T>)>;

    /// Hessian at `params` applied to `v`.
    fn hvp(&self, params: &ParamVector<T>, v: &ParamVector<T>) -> Result<ParamVector<T>>;
}
