use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CurvatureKind, CurvatureOperator, LinearOperator};
use crate::data::step_rng;
use crate::error::{Error, Result};
use crate::models::Problem;
use crate::tensor::{ParamVector, Real};

const SHIFT_PROBES: usize = 20;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn rademacher(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerIteration {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Shift `c` the iteration ran on `op + c I` with.
    pub shift: f64,
    pub seed: u64,
}

/// Largest eigenvalue of a symmetric, possibly indefinite operator.
///
/// Runs power iteration on `op + c I` where `c` is the largest
/// `||op v|| / ||v||` over a few Rademacher probes, then subtracts `c`. If
/// the shifted iteration still lands on a negative eigenvalue the shift is
/// raised past it and the iteration restarts once. Converged when successive
/// Rayleigh quotients differ by less than `tol * max(1, |value|)`; otherwise
/// the last estimate is returned unconverged.
pub fn lambda_max(op: &impl LinearOperator, iters: usize, tol: f64, seed: u64) -> Result<PowerIteration> {
    let p = op.dim();
    let mut rng = step_rng(seed, 0);
    let mut shift: f64 = 0.0;
    for _ in 0..SHIFT_PROBES {
        let v = rademacher(&mut rng, p);
        shift = shift.max(norm(&op.apply(&v)?) / norm(&v));
    }
    let start: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();

    let mut result = shifted_power(op, &start, shift, iters, tol)?;
    if result.0 < 0.0 {
        shift -= result.0;
        result = shifted_power(op, &start, shift, iters, tol)?;
    }
    let (mu, iterations, converged) = result;
    Ok(PowerIteration {
        value: mu - shift,
        iterations,
        converged,
        shift,
        seed,
    })
}

/// Returns the dominant Rayleigh quotient of `op + shift I`.
fn shifted_power(
    op: &impl LinearOperator,
    start: &[f64],
    shift: f64,
    iters: usize,
    tol: f64,
) -> Result<(f64, usize, bool)> {
    let n0 = norm(start);
    let mut v: Vec<f64> = start.iter().map(|x| x / n0).collect();
    let mut prev = f64::NAN;
    for k in 1..=iters {
        let mut w = op.apply(&v)?;
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += shift * vi;
        }
        let mu = dot(&v, &w);
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok((0.0, k, true));
        }
        if (mu - prev).abs() < tol * mu.abs().max(1.0) {
            return Ok((mu, k, true));
        }
        prev = mu;
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Ok((prev, iters, false))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Mean of `v^T op v` over Rademacher probes, with the standard error of
/// that mean.
pub fn hutchinson_trace(op: &impl LinearOperator, samples: usize, seed: u64) -> Result<TraceEstimate> {
    if samples < 2 {
        return Err(Error::Config("trace estimation needs at least two probes".into()));
    }
    let p = op.dim();
    let mut rng = step_rng(seed, 1);
    let draws = (0..samples)
        .map(|_| {
            let v = rademacher(&mut rng, p);
            Ok(dot(&v, &op.apply(&v)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = samples as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(TraceEstimate {
        estimate: mean,
        stderr: (var / n).sqrt(),
        samples,
        seed,
    })
}

/// Top eigenvalue of `H_L` and the traces of `H_L` and `H_GGN`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianStats {
    pub lambda_max: PowerIteration,
    pub trace_full: TraceEstimate,
    pub trace_ggn: TraceEstimate,
}

pub fn hessian_stats<T: Real>(
    problem: &Problem<'_>,
    params: &ParamVector<T>,
    iters: usize,
    tol: f64,
    samples: usize,
    seed: u64,
) -> Result<HessianStats> {
    let full = CurvatureOperator::new(problem, params, CurvatureKind::FullHessian)?;
    let ggn = CurvatureOperator::new(problem, params, CurvatureKind::Ggn)?;
    Ok(HessianStats {
        lambda_max: lambda_max(&full, iters, tol, seed)?,
        trace_full: hutchinson_trace(&full, samples, seed)?,
        trace_ggn: hutchinson_trace(&ggn, samples, seed)?,
    })
}
