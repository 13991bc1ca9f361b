//! Monte-Carlo check that preconditioning by `A^{-1}` shifts the weight of
//! matrix-vector products from `A` towards an independent `B`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::step_rng;
use crate::error::{Error, Result};

const RIDGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmtTrial {
    /// `||B v||^2 / ||A v||^2`
    pub r1: f64,
    /// `||B w||^2 / ||A w||^2` with `w = A^{-1} v`
    pub r2: f64,
    /// `tr(A^2) / N`
    pub mean_sq_eig: f64,
    /// `N / tr(A^{-2})`
    pub harmonic_sq_eig: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmtReport {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub mean_r1: f64,
    pub mean_r2: f64,
    pub fraction_r2_above_r1: f64,
    pub jensen_holds_every_trial: bool,
    pub per_trial: Vec<RmtTrial>,
}

/// `X X^T / N + 0.1 I` with standard normal `X`.
fn wishart(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let x = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut a = &x * x.transpose() / n as f64;
    for i in 0..n {
        a[(i, i)] += RIDGE;
    }
    a
}

/// Both ratios and the two sides of the mean/harmonic-mean inequality for
/// one draw.
pub fn precondition_ratios(a: &DMatrix<f64>, b: &DMatrix<f64>, v: &DVector<f64>) -> Result<RmtTrial> {
    let n = a.nrows();
    let chol = a.clone().cholesky().ok_or(Error::Singular)?;
    let a_inv = chol.inverse();
    let w = chol.solve(v);
    let ratio = |x: &DVector<f64>| (b * x).norm_squared() / (a * x).norm_squared();
    Ok(RmtTrial {
        r1: ratio(v),
        r2: ratio(&w),
        mean_sq_eig: (a * a).trace() / n as f64,
        harmonic_sq_eig: n as f64 / (&a_inv * &a_inv).trace(),
    })
}

pub fn rmt_precondition_demo(n: usize, trials: usize, seed: u64) -> Result<RmtReport> {
    if n < 16 {
        return Err(Error::Config(format!("matrix size {n} is below the minimum of 16")));
    }
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let per_trial = (0..trials)
        .map(|t| {
            let mut rng = step_rng(seed, t as u64);
            let a = wishart(&mut rng, n);
            let b = wishart(&mut rng, n);
            let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            precondition_ratios(&a, &b, &v)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = trials as f64;
    Ok(RmtReport {
        n,
        trials,
        seed,
        mean_r1: per_trial.iter().map(|t| t.r1).sum::<f64>() / k,
        mean_r2: per_trial.iter().map(|t| t.r2).sum::<f64>() / k,
        fraction_r2_above_r1: per_trial.iter().filter(|t| t.r2 > t.r1).count() as f64 / k,
        jensen_holds_every_trial: per_trial.iter().all(|t| t.mean_sq_eig >= t.harmonic_sq_eig),
        per_trial,
    })
}
