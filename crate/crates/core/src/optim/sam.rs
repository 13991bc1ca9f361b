use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::adam::Preconditioner;
use crate::error::{Error, Result};
use crate::models::{ModelEvaluation, Problem};
use crate::objective::Objective;
use crate::tensor::{ParamVector, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamVariant {
    #[default]
    None,
    Sam,
    PenaltySam,
    FunctionalSam,
    LogitSam,
    AngleSam,
}

impl SamVariant {
    /// Variants that only need the loss and its derivatives, not the
    /// logit/parameter split.
    pub fn is_objective_only(self) -> bool {
        matches!(self, SamVariant::None | SamVariant::Sam | SamVariant::PenaltySam)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamConfig {
    pub variant: SamVariant,
    pub rho: f64,
    /// Radians, angle-SAM only.
    pub phi: f64,
    /// Perturb along `M^{-1} g` with `M` from the AdamW second moments.
    pub preconditioned: bool,
    /// Rescale the preconditioned direction back to unit norm. Off gives
    /// `rho * M^{-1} g / ||g||` as is.
    pub renormalize_precond: bool,
    pub rho_warmup_steps: u64,
    pub grad_norm_guard: f64,
}

impl Default for SamConfig {
    fn default() -> Self {
        SamConfig {
            variant: SamVariant::None,
            rho: 0.0,
            phi: 0.0,
            preconditioned: false,
            renormalize_precond: true,
            rho_warmup_steps: 0,
            grad_norm_guard: 1e-12,
        }
    }
}

impl SamConfig {
    pub fn new(variant: SamVariant, rho: f64) -> Self {
        SamConfig {
            variant,
            rho,
            ..SamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be finite and non-negative, got {}", self.rho)));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.phi) {
            return Err(Error::Config(format!("phi must lie in [0, pi/2], got {}", self.phi)));
        }
        if !(self.grad_norm_guard > 0.0) {
            return Err(Error::Config("grad_norm_guard must be positive".into()));
        }
        Ok(())
    }

    /// `rho * min(1, step / rho_warmup_steps)`; `step` counts updates from 1.
    pub fn effective_rho(&self, step: u64) -> f64 {
        if self.rho_warmup_steps == 0 {
            return self.rho;
        }
        self.rho * (step as f64 / self.rho_warmup_steps as f64).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation<T: Real> {
    /// Unit norm unless preconditioning without renormalization.
    pub direction: ParamVector<T>,
    pub effective_rho: f64,
}

impl<T: Real> Perturbation<T> {
    /// `params + effective_rho * direction`, as a fresh vector.
    pub fn apply(&self, params: &ParamVector<T>) -> ParamVector<T> {
        let mut out = params.clone();
        out.axpy(T::of(self.effective_rho), &self.direction);
        out
    }
}

fn rescaled<T: Real>(v: &ParamVector<T>, s: f64) -> ParamVector<T> {
    v.map(|x| T::of(x.as_f64() * s))
}

/// Ascent direction for the perturbation, or `None` when `||g||` is at or
/// below the guard and the step should fall back to the plain gradient.
pub fn make_perturbation<T: Real>(
    gradient: &ParamVector<T>,
    config: &SamConfig,
    step: u64,
    preconditioner: Option<&Preconditioner<T>>,
) -> Result<Option<Perturbation<T>>> {
    let norm = gradient.norm();
    if !(norm > config.grad_norm_guard) {
        return Ok(None);
    }
    let direction = match (config.preconditioned, preconditioner) {
        (true, Some(p)) => {
            gradient.check_layout(&p.inverse)?;
            let u = gradient.zip_map(&p.inverse, |g, m| g * m);
            if config.renormalize_precond {
                // Same rounding as the plain branch when M is the identity.
                rescaled(&u, 1.0 / u.norm())
            } else {
                rescaled(&u, 1.0 / norm)
            }
        }
        (true, None) => return Err(Error::Config("preconditioned perturbation needs AdamW state".into())),
        (false, _) => rescaled(gradient, 1.0 / norm),
    };
    Ok(Some(Perturbation {
        direction,
        effective_rho: config.effective_rho(step),
    }))
}

/// One SAM-family gradient with the numbers a training log wants.
#[derive(Clone, Debug, PartialEq)]
pub struct SamStep<T: Real> {
    /// Ascent direction handed to the base optimizer.
    pub gradient: ParamVector<T>,
    /// Loss at the unperturbed parameters.
    pub loss: f64,
    /// `||grad L||` at the unperturbed parameters.
    pub grad_norm: f64,
    /// Zero when no perturbation happened.
    pub effective_rho: f64,
    /// Set when the gradient norm fell under the guard.
    pub skipped: bool,
}

impl<T: Real> SamStep<T> {
    fn plain(loss: f64, gradient: ParamVector<T>, skipped: bool) -> Self {
        let grad_norm = gradient.norm();
        SamStep {
            gradient,
            loss,
            grad_norm,
            effective_rho: 0.0,
            skipped,
        }
    }

    fn perturbed(loss: f64, grad_norm: f64, pert: &Perturbation<T>, gradient: ParamVector<T>) -> Self {
        SamStep {
            gradient,
            loss,
            grad_norm,
            effective_rho: pert.effective_rho,
            skipped: false,
        }
    }
}

fn expect_variant(config: &SamConfig, want: SamVariant) -> Result<()> {
    config.validate()?;
    if config.variant != want {
        return Err(Error::Config(format!(
            "expected variant {want:?}, configuration has {:?}",
            config.variant
        )));
    }
    Ok(())
}

/// Gradient at `theta + rho * direction`.
pub fn sam_gradient<T: Real>(
    objective: &impl Objective<T>,
    params: &ParamVector<T>,
    config: &SamConfig,
    step: u64,
    preconditioner: Option<&Preconditioner<T>>,
) -> Result<SamStep<T>> {
    expect_variant(config, SamVariant::Sam)?;
    let (loss, g) = objective.value_and_grad(params)?;
    let Some(pert) = make_perturbation(&g, config, step, preconditioner)? else {
        return Ok(SamStep::plain(loss, g, true));
    };
    let (_, g_adv) = objective.value_and_grad(&pert.apply(params))?;
    Ok(SamStep::perturbed(loss, g.norm(), &pert, g_adv))
}

/// `g + rho * H direction`: the exact gradient of `L + rho ||grad L||` in the
/// unpreconditioned case.
pub fn penalty_sam_gradient<T: Real>(
    objective: &impl Objective<T>,
    params: &ParamVector<T>,
    config: &SamConfig,
    step: u64,
    preconditioner: Option<&Preconditioner<T>>,
) -> Result<SamStep<T>> {
    expect_variant(config, SamVariant::PenaltySam)?;
    let (loss, g) = objective.value_and_grad(params)?;
    let Some(pert) = make_perturbation(&g, config, step, preconditioner)? else {
        return Ok(SamStep::plain(loss, g, true));
    };
    let hd = objective.hvp(params, &pert.direction)?;
    let mut out = g.clone();
    out.axpy(T::of(pert.effective_rho), &hd);
    Ok(SamStep::perturbed(loss, g.norm(), &pert, out))
}

/// Parameter Jacobian at the perturbed point, logit gradient from the
/// unperturbed one.
fn functional_path<T: Real>(
    problem: &Problem<'_>,
    params: &ParamVector<T>,
    at: &ModelEvaluation<T>,
    pert: &Perturbation<T>,
) -> Result<ParamVector<T>> {
    let shifted = problem.evaluate(&pert.apply(params))?;
    shifted.vjp(&at.logit_gradient()?)
}

/// Logit gradient from the perturbed point, parameter Jacobian at the
/// unperturbed one.
fn logit_path<T: Real>(
    problem: &Problem<'_>,
    params: &ParamVector<T>,
    at: &ModelEvaluation<T>,
    pert: &Perturbation<T>,
) -> Result<ParamVector<T>> {
    let shifted = problem.evaluate(&pert.apply(params))?;
    at.vjp(&shifted.logit_gradient()?)
}

/// Shared first pass: evaluation at `theta`, its gradient, and the
/// perturbation (if any).
type FirstPass<T> = (ModelEvaluation<T>, ParamVector<T>, Option<Perturbation<T>>);

fn first_pass<T: Real>(
    problem: &Problem<'_>,
    params: &ParamVector<T>,
    config: &SamConfig,
    step: u64,
    preconditioner: Option<&Preconditioner<T>>,
) -> Result<FirstPass<T>> {
    let at = problem.evaluate(params)?;
    let g = at.gradient()?;
    let pert = make_perturbation(&g, config, step, preconditioner)?;
    Ok((at, g, pert))
}

pub fn functional_sam_gradient<T: Real>(
    problem: &Problem<'_>,
    params: &ParamVector<T>,
    config: &SamConfig,
    step: u64,
    preconditioner: Option<&Preconditioner<T>>,
) -> Result<SamStep<T>> {
    expect_variant(config, SamVariant::FunctionalSam)?;
    let (at, g, pert) = first_pass(problem, params, config, step, preconditioner)?;
    let Some(pert) = pert else {
        return Ok(SamStep::plain(at.loss(), g, true));
    };
    let out = functional_path(problem, params, &at, &pert)?;
    Ok(SamStep::perturbed(at.loss(), g.norm(), &pert, out))
}

pub fn logit_sam_gradient<T: Real>(
    problem: &Problem<'_>,
    params: &ParamVector<T>,
    config: &SamConfig,
    step: u64,
    preconditioner: Option<&Preconditioner<T>>,
) -> Result<SamStep<T>> {
    expect_variant(config, SamVariant::LogitSam)?;
    let (at, g, pert) = first_pass(problem, params, config, step, preconditioner)?;
    let Some(pert) = pert else {
        return Ok(SamStep::plain(at.loss(), g, true));
    };
    let out = logit_path(problem, params, &at, &pert)?;
    Ok(SamStep::perturbed(at.loss(), g.norm(), &pert, out))
}

/// `g + sin(phi) (g_logit - g) + cos(phi) (g_func - g)` over one shared
/// perturbation. The endpoints return the pure logit or functional update
/// bit for bit.
pub fn angle_sam_gradient<T: Real>(
    problem: &Problem<'_>,
    params: &ParamVector<T>,
    config: &SamConfig,
    step: u64,
    preconditioner: Option<&Preconditioner<T>>,
) -> Result<SamStep<T>> {
    expect_variant(config, SamVariant::AngleSam)?;
    let (at, g, pert) = first_pass(problem, params, config, step, preconditioner)?;
    let Some(pert) = pert else {
        return Ok(SamStep::plain(at.loss(), g, true));
    };
    let phi = config.phi;
    let out = if phi == 0.0 {
        functional_path(problem, params, &at, &pert)?
    } else if phi == FRAC_PI_2 {
        logit_path(problem, params, &at, &pert)?
    } else {
        let shifted = problem.evaluate(&pert.apply(params))?;
        let g_func = shifted.vjp(&at.logit_gradient()?)?;
        let g_logit = at.vjp(&shifted.logit_gradient()?)?;
        let (s, c) = phi.sin_cos();
        let mut out = g.clone();
        out.axpy(T::of(s), &g_logit.sub(&g));
        out.axpy(T::of(c), &g_func.sub(&g));
        out
    };
    Ok(SamStep::perturbed(at.loss(), g.norm(), &pert, out))
}

/// Plain gradient for [`SamVariant::None`], otherwise the configured variant.
pub fn sam_family_gradient<T: Real>(
    problem: &Problem<'_>,
    params: &ParamVector<T>,
    config: &SamConfig,
    step: u64,
    preconditioner: Option<&Preconditioner<T>>,
) -> Result<SamStep<T>> {
    match config.variant {
        SamVariant::FunctionalSam => functional_sam_gradient(problem, params, config, step, preconditioner),
        SamVariant::LogitSam => logit_sam_gradient(problem, params, config, step, preconditioner),
        SamVariant::AngleSam => angle_sam_gradient(problem, params, config, step, preconditioner),
        _ => objective_gradient(problem, params, config, step, preconditioner),
    }
}

/// The variants that work on any [`Objective`]. Errors for the ones that
/// need the logit split.
pub fn objective_gradient<T: Real>(
    objective: &impl Objective<T>,
    params: &ParamVector<T>,
    config: &SamConfig,
    step: u64,
    preconditioner: Option<&Preconditioner<T>>,
) -> Result<SamStep<T>> {
    match config.variant {
        SamVariant::None => {
            config.validate()?;
            let (loss, g) = objective.value_and_grad(params)?;
            Ok(SamStep::plain(loss, g, false))
        }
        SamVariant::Sam => sam_gradient(objective, params, config, step, preconditioner),
        SamVariant::PenaltySam => penalty_sam_gradient(objective, params, config, step, preconditioner),
        other => Err(Error::Config(format!(
            "variant {other:?} needs a model evaluation, not a bare objective"
        ))),
    }
}
