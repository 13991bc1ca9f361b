use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamVector, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid AdamW hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// AdamW moments. Moments are stored in the parameter precision; the update
/// arithmetic runs in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real> {
    pub t: u64,
    pub m: ParamVector<T>,
    pub v: ParamVector<T>,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(layout: &ParamVector<T>, config: AdamConfig) -> Self {
        AdamState {
            t: 0,
            m: layout.zeros_like(),
            v: layout.zeros_like(),
            config,
        }
    }

    /// One decoupled-weight-decay step with bias correction, at learning
    /// rate `lr` (the configured rate after any schedule).
    pub fn step(&mut self, params: &mut ParamVector<T>, grad: &ParamVector<T>, lr: f64) -> Result<()> {
        params.check_layout(grad)?;
        self.m.check_layout(params)?;
        let c = &self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let entries = params
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
            .zip(grad.iter());
        for ((((_, p), (_, m)), (_, v)), (_, g)) in entries {
            let lanes = p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
                .zip(g.data());
            for (((p, m), v), g) in lanes {
                let g = g.as_f64();
                let mf = c.beta1 * m.as_f64() + (1.0 - c.beta1) * g;
                let vf = c.beta2 * v.as_f64() + (1.0 - c.beta2) * g * g;
                *m = T::of(mf);
                *v = T::of(vf);
                let update = (mf / bc1) / ((vf / bc2).sqrt() + c.eps) + c.weight_decay * p.as_f64();
                *p = T::of(p.as_f64() - lr * update);
            }
        }
        Ok(())
    }
}

/// Elementwise inverse preconditioner.
#[derive(Clone, Debug, PartialEq)]
pub struct Preconditioner<T: Real> {
    pub inverse: ParamVector<T>,
    /// Set when no moments exist yet and the identity was substituted.
    pub identity_fallback: bool,
}

/// `1 / (sqrt(v_hat) + eps)` from the bias-corrected second moment. Before
/// the first update there is no `v_hat`; the identity is returned and
/// flagged.
pub fn adam_preconditioner<T: Real>(state: &AdamState<T>) -> Preconditioner<T> {
    if state.t == 0 {
        return Preconditioner {
            inverse: state.v.map(|_| T::one()),
            identity_fallback: true,
        };
    }
    let bc2 = 1.0 - state.config.beta2.powi(state.t as i32);
    let eps = state.config.eps;
    Preconditioner {
        inverse: state.v.map(|v| T::of(1.0 / ((v.as_f64() / bc2).sqrt() + eps))),
        identity_fallback: false,
    }
}

/// Plain gradient descent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 0.1 }
    }
}

pub fn sgd_step<T: Real>(params: &mut ParamVector<T>, grad: &ParamVector<T>, lr: f64) -> Result<()> {
    params.check_layout(grad)?;
    params.axpy(T::of(-lr), grad);
    Ok(())
}

/// Value-returning form of [`AdamState::step`] at the configured rate.
pub fn adamw_step<T: Real>(
    state: &AdamState<T>,
    grad: &ParamVector<T>,
    params: &ParamVector<T>,
) -> Result<(ParamVector<T>, AdamState<T>)> {
    let mut next_state = state.clone();
    let mut next_params = params.clone();
    next_state.step(&mut next_params, grad, state.config.lr)?;
    Ok((next_params, next_state))
}
