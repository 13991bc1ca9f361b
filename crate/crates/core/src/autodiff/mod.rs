//! Tape-based differentiation: reverse mode (VJP), forward mode (JVP) and
//! Hessian-vector products by forward-over-reverse.
//!
//! A [`Graph`] records primal values while the model is built. Tangents are
//! replayed forward over the recorded nodes; the reverse sweep optionally
//! carries the tangent of every adjoint alongside it, which yields `H v`.

mod graph;
mod kernels;
mod rules;


pub use graph::{Graph, Var};
pub use kernels::UnaryFn;
pub use rules::Tangents;

use crate::error::Result;
use crate::tensor::{ParamVector, Real};

/// Scalar value and exact gradient of the loss built by `loss_fn`.
pub fn grad<T: Real>(
    params: &ParamVector<T>,
    loss_fn: impl FnOnce(&mut Graph<T>) -> Result<Var>,
) -> Result<(f64, ParamVector<T>)> {
    let mut g = Graph::new(params);
    let loss = loss_fn(&mut g)?;
    let gradient = g.gradient(loss)?;
    Ok((g.value(loss).data()[0].as_f64(), gradient))
}

/// `H v` for the Hessian of the loss built by `loss_fn`.
pub fn hvp<T: Real>(
    params: &ParamVector<T>,
    v: &ParamVector<T>,
    loss_fn: impl FnOnce(&mut Graph<T>) -> Result<Var>,
) -> Result<ParamVector<T>> {
    let mut g = Graph::new(params);
    let loss = loss_fn(&mut g)?;
    g.hvp(loss, v)
}
