use nalgebra::DMatrix;

use super::{CurvatureKind, CurvatureOperator, LinearOperator};
use crate::error::{Error, Result};
use crate::models::Problem;
use crate::objective::Objective;
use crate::tensor::ParamVector;

/// Largest parameter count the dense oracles accept.
pub const DENSE_ORACLE_LIMIT: usize = 4096;

const FD_STEP: f64 = 1e-3;
const FD_TOLERANCE: f64 = 1e-3;

fn guard(count: usize) -> Result<()> {
    if count > DENSE_ORACLE_LIMIT {
        return Err(Error::SizeGuard {
            count,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    Ok(())
}

/// The matrix of `op`, assembled one basis column at a time.
pub fn dense_matrix(op: &impl LinearOperator) -> Result<DMatrix<f64>> {
    let p = op.dim();
    guard(p)?;
    let mut m = DMatrix::zeros(p, p);
    let mut e = vec![0.0; p];
    for j in 0..p {
        e[j] = 1.0;
        let col = op.apply(&e)?;
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok(m)
}

/// Loss Hessian assembled from Hessian-vector products on basis vectors and
/// cross-checked column by column against central differences of the
/// gradient. Fails with [`Error::OracleMismatch`] when the two disagree by
/// more than `1e-3` in relative Frobenius norm.
pub fn dense_loss_hessian(objective: &impl Objective<f64>, params: &ParamVector<f64>) -> Result<DMatrix<f64>> {
    let p = params.len();
    guard(p)?;
    let mut exact = DMatrix::zeros(p, p);
    let mut fd = DMatrix::zeros(p, p);
    let mut e = vec![0.0; p];
    for j in 0..p {
        e[j] = 1.0;
        let basis = params.unflatten(&e)?;
        let col = objective.hvp(params, &basis)?.flatten();
        exact.column_mut(j).copy_from_slice(&col);
        let mut plus = params.clone();
        plus.axpy(FD_STEP, &basis);
        let mut minus = params.clone();
        minus.axpy(-FD_STEP, &basis);
        let gp = objective.value_and_grad(&plus)?.1.flatten();
        let gm = objective.value_and_grad(&minus)?.1.flatten();
        for i in 0..p {
            fd[(i, j)] = (gp[i] - gm[i]) / (2.0 * FD_STEP);
        }
        e[j] = 0.0;
    }
    let scale = exact.norm().max(f64::MIN_POSITIVE);
    let rel = (&exact - &fd).norm() / scale;
    if rel > FD_TOLERANCE {
        return Err(Error::OracleMismatch(rel));
    }
    Ok(exact)
}

/// Dense `H_L` and `H_GGN` of a small model.
#[derive(Clone, Debug)]
pub struct DenseHessians {
    pub full: DMatrix<f64>,
    pub ggn: DMatrix<f64>,
}

impl DenseHessians {
    pub fn functional(&self) -> DMatrix<f64> {
        &self.full - &self.ggn
    }
}

pub fn dense_hessian_oracle(problem: &Problem<'_>, params: &ParamVector<f64>) -> Result<DenseHessians> {
    guard(params.len())?;
    let full = dense_loss_hessian(problem, params)?;
    let ggn = dense_matrix(&CurvatureOperator::new(problem, params, CurvatureKind::Ggn)?)?;
    Ok(DenseHessians { full, ggn })
}
