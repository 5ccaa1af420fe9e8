//! Penalized binary and multinomial logistic regression.

mod cv;
mod family;
mod logistic;
mod multinomial;
mod penalty;
mod solver;

pub use cv::{cross_validate_lambda, lambda_scale, stratified_folds, CvConfig, CvSelection, LambdaGrid, Response};
pub use family::{psi, psi_prime, LinkFamily};
pub use logistic::{
    fit_penalized_logistic, fit_penalized_logistic_with, lambda_max, negative_log_likelihood, predict_proba,
    ModelFit,
};
pub use multinomial::{fit_penalized_multinomial, fit_penalized_multinomial_with, MultinomialFit};
pub use penalty::{PenaltyKind, PenaltySpec};
pub use solver::SolverOptions;

pub(crate) use logistic::degenerate_fit;
