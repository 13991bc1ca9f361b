//! Base optimizers and the SAM-family gradient estimators.
//!
//! Every estimator returns an ascent direction; the base optimizer applies
//! the descent step.

mod adam;
mod sam;
mod trainer;


pub use adam::{adam_preconditioner, adamw_step, sgd_step, AdamConfig, AdamState, Preconditioner, SgdConfig};
pub use sam::{
    angle_sam_gradient, functional_sam_gradient, logit_sam_gradient, make_perturbation, objective_gradient,
    penalty_sam_gradient, sam_family_gradient, sam_gradient, Perturbation, SamConfig, SamStep, SamVariant,
};
pub use trainer::{BaseState, LrSchedule, OptimizerConfig, StepMetrics, Trainer, TrainerConfig};
