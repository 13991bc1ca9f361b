//! Fixtures shared by the unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use nalgebra::{DMatrix, DVector};

use crate::data::Batch;
use crate::objective::Objective;
use crate::models::{LinearSoftmaxConfig, MlpConfig, ModelConfig, Nonlinearity, TransformerConfig};
use crate::tensor::{ParamVector, Tensor};

/// 139 parameters.
pub fn tiny_mlp() -> ModelConfig {
    ModelConfig::Mlp(MlpConfig {
        input_dim: 4,
        hidden: vec![8, 8],
        classes: 3,
        nonlinearity: Nonlinearity::Gelu,
    })
}

pub fn linear_softmax() -> ModelConfig {
    ModelConfig::LinearSoftmax(LinearSoftmaxConfig { input_dim: 4, classes: 3 })
}

pub fn tiny_transformer() -> ModelConfig {
    ModelConfig::Transformer(TransformerConfig {
        depth: 1,
        heads: 2,
        width: 8,
        mlp_dim: 32,
        vocab: 7,
        seq_len: 5,
        nonlinearity: Nonlinearity::Gelu,
    })
}

pub fn features(n: usize, d: usize, k: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch::Features {
        features: (0..n * d).map(|_| rng.sample(StandardNormal)).collect(),
        labels: (0..n).map(|i| (i * 7 + 3) % k).collect(),
        batch: n,
        dim: d,
    }
}

pub fn tokens(b: usize, t: usize, vocab: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch::Tokens {
        inputs: (0..b * t).map(|_| rng.gen_range(0..vocab)).collect(),
        targets: (0..b * t).map(|_| rng.gen_range(0..vocab)).collect(),
        batch: b,
        seq_len: t,
    }
}

/// Each shipped workload with a matching small batch.
pub fn shipped() -> Vec<(ModelConfig, Batch)> {
    vec![
        (tiny_mlp(), features(8, 4, 3, 1)),
        (linear_softmax(), features(8, 4, 3, 2)),
        (tiny_transformer(), tokens(2, 5, 7, 3)),
    ]
}

pub fn gaussian_like(rng: &mut ChaCha8Rng, layout: &ParamVector<f64>) -> ParamVector<f64> {
    layout
        .iter()
        .map(|(n, t)| {
            let data = (0..t.len()).map(|_| rng.sample(StandardNormal)).collect();
            (n.clone(), Tensor::new(t.shape().to_vec(), data).expect("layout shape"))
        })
        .collect()
}

pub fn unit_like(rng: &mut ChaCha8Rng, layout: &ParamVector<f64>) -> ParamVector<f64> {
    let v = gaussian_like(rng, layout);
    let n = v.norm();
    v.scaled(1.0 / n)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `0.5 theta^T A theta` with a fixed symmetric `A`.
pub struct Quadratic(pub DMatrix<f64>);

impl Objective<f64> for Quadratic {
    fn value_and_grad(&self, params: &ParamVector<f64>) -> crate::Result<(f64, ParamVector<f64>)> {
        let x = DVector::from_vec(params.flatten());
        let g = &self.0 * &x;
        Ok((0.5 * x.dot(&g), params.unflatten(g.as_slice())?))
    }

    fn hvp(&self, params: &ParamVector<f64>, v: &ParamVector<f64>) -> crate::Result<ParamVector<f64>> {
        let hv = &self.0 * DVector::from_vec(v.flatten());
        params.unflatten(hv.as_slice())
    }
}

/// A single entry `x` holding `values`.
pub fn vector(values: &[f64]) -> ParamVector<f64> {
    [("x".to_string(), Tensor::new(vec![values.len()], values.to_vec()).expect("1-d"))]
        .into_iter()
        .collect()
}
