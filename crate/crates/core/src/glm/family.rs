use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Exponential-family link used by the outcome and propensity models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkFamily {
    BinaryLogit,
    MultinomialLogit,
}

impl LinkFamily {
    /// Cumulant function `ψ` of the binary logit family.
    pub fn psi<F: Scalar>(self, theta: F) -> F {
        psi(theta)
    }

    pub fn psi_prime<F: Scalar>(self, theta: F) -> F {
        psi_prime(theta)
    }
}

#[inline]
pub(crate) fn clamp_theta<F: Scalar>(theta: F) -> F {
    theta.max(-F::THETA_CLAMP).min(F::THETA_CLAMP)
}

/// `ψ(θ) = log(1 + exp(θ))`, evaluated in a form that never overflows.
#[inline]
pub fn psi<F: Scalar>(theta: F) -> F {
    let t = theta;
    if t > F::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `ψ'(θ) = 1 / (1 + exp(−θ))`, the inverse logit, with `|θ| ≤ 30` so the
/// result stays strictly inside `(0, 1)`.
#[inline]
pub fn psi_prime<F: Scalar>(theta: F) -> F {
    let t = clamp_theta(theta);
    if t >= F::zero() {
        F::one() / (F::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (F::one() + e)
    }
}
