use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::adam::{adam_preconditioner, sgd_step, AdamConfig, AdamState, Preconditioner, SgdConfig};
use super::sam::{objective_gradient, sam_family_gradient, SamConfig, SamStep};
use crate::error::{Error, Result};
use crate::models::Problem;
use crate::objective::Objective;
use crate::tensor::{ParamVector, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adamw(AdamConfig),
    Sgd(SgdConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adamw(AdamConfig::default())
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Adamw(c) => c.lr,
            OptimizerConfig::Sgd(c) => c.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Adamw(c) => c.validate(),
            OptimizerConfig::Sgd(c) if c.lr >= 0.0 => Ok(()),
            OptimizerConfig::Sgd(c) => Err(Error::Config(format!("negative learning rate {}", c.lr))),
        }
    }
}

/// Linear warm-up, then constant or cosine decay to zero at `total_steps`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub warmup_steps: u64,
    pub cosine_decay: bool,
    pub total_steps: u64,
}

impl LrSchedule {
    /// Multiplier on the base rate for update number `step` (from 1).
    pub fn factor(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return step as f64 / self.warmup_steps as f64;
        }
        if !self.cosine_decay || self.total_steps <= self.warmup_steps {
            return 1.0;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * (1.0 + (PI * progress).cos())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub sam: SamConfig,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.sam.validate()?;
        if self.sam.preconditioned && !matches!(self.optimizer, OptimizerConfig::Adamw(_)) {
            return Err(Error::Config("preconditioned perturbations need the AdamW optimizer".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BaseState<T: Real> {
    Adamw(AdamState<T>),
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Update number, from 1.
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    /// Norm of the direction handed to the base optimizer.
    pub update_grad_norm: f64,
    pub effective_rho: f64,
    pub lr: f64,
    pub skipped_perturbation: bool,
}

/// Parameters plus optimizer state, advanced one batch at a time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer<T: Real> {
    pub config: TrainerConfig,
    pub params: ParamVector<T>,
    pub base: BaseState<T>,
    /// Completed updates.
    pub step: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainerConfig, params: ParamVector<T>) -> Result<Self> {
        config.validate()?;
        let base = match &config.optimizer {
            OptimizerConfig::Adamw(c) => BaseState::Adamw(AdamState::new(&params, c.clone())),
            OptimizerConfig::Sgd(_) => BaseState::Sgd,
        };
        Ok(Trainer {
            config,
            params,
            base,
            step: 0,
        })
    }

    pub fn preconditioner(&self) -> Option<Preconditioner<T>> {
        match (&self.base, self.config.sam.preconditioned) {
            (BaseState::Adamw(s), true) => Some(adam_preconditioner(s)),
            _ => None,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        self.config.optimizer.lr() * self.config.schedule.factor(step)
    }

    /// One SAM-family step on a model batch.
    pub fn train_step(&mut self, problem: &Problem<'_>) -> Result<StepMetrics> {
        let step = self.step + 1;
        let pre = self.preconditioner();
        let sam = sam_family_gradient(problem, &self.params, &self.config.sam, step, pre.as_ref())?;
        self.finish(sam)
    }

    /// One step on a bare objective; only the variants that need no logit
    /// split are available.
    pub fn train_step_objective(&mut self, objective: &impl Objective<T>) -> Result<StepMetrics> {
        let step = self.step + 1;
        let pre = self.preconditioner();
        let sam = objective_gradient(objective, &self.params, &self.config.sam, step, pre.as_ref())?;
        self.finish(sam)
    }

    fn finish(&mut self, sam: SamStep<T>) -> Result<StepMetrics> {
        let step = self.step + 1;
        if !sam.loss.is_finite() || !sam.gradient.all_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let lr = self.apply_gradient(&sam.gradient)?;
        Ok(StepMetrics {
            step,
            loss: sam.loss,
            grad_norm: sam.grad_norm,
            update_grad_norm: sam.gradient.norm(),
            effective_rho: sam.effective_rho,
            lr,
            skipped_perturbation: sam.skipped,
        })
    }

    /// Feeds `grad` to the base optimizer and returns the rate used.
    pub fn apply_gradient(&mut self, grad: &ParamVector<T>) -> Result<f64> {
        let step = self.step + 1;
        let lr = self.lr(step);
        match &mut self.base {
            BaseState::Adamw(s) => s.step(&mut self.params, grad, lr)?,
            BaseState::Sgd => sgd_step(&mut self.params, grad, lr)?,
        }
        self.step = step;
        Ok(lr)
    }
}
