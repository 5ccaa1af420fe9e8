//! Replicated simulation study: data generation, Monte Carlo truth, and
//! bias / RMSE / coverage summaries. Double precision only.

mod dgp;
mod study;

pub use dgp::{
    assign_regions, cholesky, compute_true_tatt, draw_coefficients, draw_covariates, draw_delta, draw_outcomes,
    expit, generate_dataset, region_probabilities, replicate_dataset, sample_mvn, study_coefficients, Coefficients,
    DgpConfig, TrueEffects,
};
pub use study::{compute_metrics, estimate_replicate, run_replicates, MetricsRow, ReplicateRow, StudyOptions, StudyRun};
