use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    /// `λ‖b‖₂`, the unsquared Euclidean norm of the penalized block.
    #[default]
    L2Norm,
    /// `λ‖b‖₂²` (ridge).
    SquaredL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    #[serde(default)]
    pub penalize_intercept: bool,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64) -> Self {
        Self {
            kind,
            lambda,
            penalize_intercept: false,
        }
    }

    pub fn l2_norm(lambda: f64) -> Self {
        Self::new(PenaltyKind::L2Norm, lambda)
    }

    pub fn squared_l2(lambda: f64) -> Self {
        Self::new(PenaltyKind::SquaredL2, lambda)
    }

    pub fn none() -> Self {
        Self::new(PenaltyKind::SquaredL2, 0.0)
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn with_intercept_penalized(self, on: bool) -> Self {
        Self {
            penalize_intercept: on,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "penalty lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Penalty value on the penalized block.
    pub(crate) fn value<F: Scalar>(&self, block: impl Iterator<Item = F>) -> F {
        let lambda = F::lit(self.lambda);
        let sq: F = block.map(|v| v * v).sum();
        match self.kind {
            PenaltyKind::L2Norm => lambda * sq.sqrt(),
            PenaltyKind::SquaredL2 => lambda * sq,
        }
    }

    /// Scale factor applied to the block by the proximal operator with step `step`.
    ///
    /// For the unsquared norm this is block soft-thresholding, which returns
    /// exactly zero once the block norm falls under `step·λ`.
    pub(crate) fn prox_scale<F: Scalar>(&self, block_norm: F, step: F) -> F {
        let lambda = F::lit(self.lambda);
        match self.kind {
            PenaltyKind::L2Norm => {
                let thr = step * lambda;
                if block_norm <= thr {
                    F::zero()
                } else {
                    F::one() - thr / block_norm
                }
            }
            PenaltyKind::SquaredL2 => F::one() / (F::one() + F::lit(2.0) * step * lambda),
        }
    }
}
