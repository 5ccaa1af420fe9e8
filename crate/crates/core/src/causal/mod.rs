//! Region-model fitting, doubly-robust effect estimation and
//! leave-one-center-out sensitivity runs.

mod estimator;
mod pipeline;
mod propensity;

pub use estimator::{
    bootstrap_se, dr_components, estimate_from_components, estimate_mpo, estimate_tatt, sandwich_se, DrComponents,
    EffectKind, EstimateOptions, FnOutcome, OutcomeMethod, OutcomeModel, TattEstimate, VarianceMethod, Z_95,
};
pub use pipeline::{
    estimate_effects, estimate_effects_each, estimate_effects_with, fit_outcome, fit_outcomes, leave_one_out_sensitivity, ordered_pairs,
    EffectRequest, FittedOutcome, PipelineConfig, SensitivityRun,
};
pub use propensity::{
    clip_and_renormalize, default_propensity_penalty, estimate_propensity, ClipBounds, PropensityModel,
};
