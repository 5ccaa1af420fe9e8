//! Monotone accelerated proximal gradient for `smooth(b) + penalty(block of b)`.

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use super::penalty::PenaltySpec;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative objective change below which an iteration counts as stalled.
    pub tol: f64,
    /// Sup-norm of the proximal gradient mapping required for convergence.
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            gtol: 1e-7,
            max_iter: 5000,
        }
    }
}

/// Differentiable part of a penalized objective.
pub(crate) trait SmoothLoss<F: Scalar> {
    fn dim(&self) -> usize;
    fn value(&self, b: ArrayView1<F>) -> F;
    /// Writes the gradient into `grad` and returns the value.
    fn value_grad(&self, b: ArrayView1<F>, grad: &mut Array1<F>) -> F;
    /// Upper estimate of the gradient's Lipschitz constant.
    fn lipschitz(&self) -> F;
}

#[derive(Debug, Clone)]
pub(crate) struct Solution<F> {
    pub x: Array1<F>,
    pub objective: F,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) struct Prox<'a> {
    pub penalty: &'a PenaltySpec,
    pub penalized: &'a [bool],
}

impl Prox<'_> {
    pub fn value<F: Scalar>(&self, b: ArrayView1<F>) -> F {
        if self.penalty.lambda == 0.0 {
            return F::zero();
        }
        self.penalty.value(
            b.iter()
                .zip(self.penalized)
                .filter(|(_, &on)| on)
                .map(|(&v, _)| v),
        )
    }

    pub fn apply<F: Scalar>(&self, v: &mut Array1<F>, step: F) {
        if self.penalty.lambda == 0.0 {
            return;
        }
        let norm = v
            .iter()
            .zip(self.penalized)
            .filter(|(_, &on)| on)
            .map(|(&x, _)| x * x)
            .sum::<F>()
            .sqrt();
        let scale = self.penalty.prox_scale(norm, step);
        for (x, &on) in v.iter_mut().zip(self.penalized) {
            if on {
                *x = *x * scale;
            }
        }
    }
}

/// FISTA with backtracking, a monotone acceptance rule and function-value
/// restart. The accepted objective sequence never increases beyond the
/// rounding noise of evaluating it.
pub(crate) fn minimize<F: Scalar, L: SmoothLoss<F>>(
    loss: &L,
    prox: &Prox<'_>,
    x0: Array1<F>,
    opts: &SolverOptions,
) -> Solution<F> {
    let dim = loss.dim();
    debug_assert_eq!(x0.len(), dim);
    debug_assert_eq!(prox.penalized.len(), dim);

    let tol = F::lit(opts.tol);
    let gtol = F::lit(opts.gtol);
    let half = F::lit(0.5);
    let slack = F::epsilon() * F::lit(16.0);
    let grow = F::lit(1.1);

    let mut x = x0;
    let mut fx = loss.value(x.view()) + prox.value(x.view());
    let mut y = x.clone();
    let mut t = F::one();
    let lip = loss.lipschitz();
    let mut step = if lip > F::zero() && lip.is_finite() {
        F::one() / lip
    } else {
        F::one()
    };
    let mut grad = Array1::zeros(dim);
    let mut z = Array1::zeros(dim);

    for it in 1..=opts.max_iter {
        // let the step recover after backtracking; flat regions of the loss
        // then allow steps well beyond 1/L
        step = step * grow;
        let fy = loss.value_grad(y.view(), &mut grad);
        let fz = loop {
            Zip::from(&mut z)
                .and(&y)
                .and(&grad)
                .for_each(|z, &y, &g| *z = y - step * g);
            prox.apply(&mut z, step);
            let fz = loss.value(z.view());
            let mut lin = F::zero();
            let mut sq = F::zero();
            Zip::from(&z).and(&y).and(&grad).for_each(|&z, &y, &g| {
                let d = z - y;
                lin = lin + g * d;
                sq = sq + d * d;
            });
            if fz <= fy + lin + sq * half / step + slack * fy.abs() || step < F::lit(1e-30) {
                break fz;
            }
            step = step * half;
        };
        let obj_z = fz + prox.value(z.view());
        let gmap = z
            .iter()
            .zip(y.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), |a, b| a.max(b))
            / step;

        // A plain proximal step from x (t = 1) descends in exact arithmetic;
        // when it fails to only by the rounding noise of the objective sum it
        // is taken anyway so the gradient-mapping test can finish.
        let noise = slack * F::lit(64.0) * fx.abs().max(F::one());
        let plain = t == F::one();
        if obj_z <= fx || (plain && obj_z <= fx + noise) {
            let t_next = (F::one() + (F::one() + F::lit(4.0) * t * t).sqrt()) * half;
            let momentum = (t - F::one()) / t_next;
            Zip::from(&mut y)
                .and(&z)
                .and(&x)
                .for_each(|y, &z, &x| *y = z + momentum * (z - x));
            std::mem::swap(&mut x, &mut z);
            let rel = (fx - obj_z).abs() / fx.abs().max(F::one());
            debug_assert!(obj_z <= fx + noise, "objective increased");
            fx = obj_z;
            t = t_next;
            if rel < tol && gmap < gtol {
                return Solution {
                    x,
                    objective: fx,
                    converged: true,
                    iterations: it,
                };
            }
        } else if plain {
            return Solution {
                x,
                objective: fx,
                converged: gmap < gtol,
                iterations: it,
            };
        } else {
            y.assign(&x);
            t = F::one();
        }
    }
    Solution {
        x,
        objective: fx,
        converged: false,
        iterations: opts.max_iter,
    }
}

/// Power-iteration estimate of the largest eigenvalue of `AᵀA / n` for the
/// intercept-augmented design, inflated slightly to stay an upper bound.
pub(crate) fn gram_spectral_bound<F: Scalar>(x: ndarray::ArrayView2<F>) -> F {
    let n = x.nrows().max(1);
    let p = x.ncols();
    let nf = F::from_usize_lossy(n);
    let mut v = Array1::from_elem(p + 1, F::one());
    let mut lambda = F::one();
    for _ in 0..30 {
        let norm = v.dot(&v).sqrt();
        if norm == F::zero() {
            break;
        }
        v.mapv_inplace(|a| a / norm);
        // A v, with A = [1 | X]
        let av = x.dot(&v.slice(ndarray::s![1..])).mapv(|a| a + v[0]);
        let mut w = Array1::zeros(p + 1);
        w[0] = av.sum();
        w.slice_mut(ndarray::s![1..]).assign(&x.t().dot(&av));
        w.mapv_inplace(|a| a / nf);
        lambda = v.dot(&w);
        v = w;
    }
    lambda * F::lit(1.05)
}

/// Column means and the centered design. With the intercept unpenalized,
/// fitting on centered columns is the same problem with the intercept
/// shifted by `means · slopes`, and it is much better conditioned when
/// covariates sit far from zero.
pub(crate) struct Centered<F> {
    pub means: Array1<F>,
    pub x: ndarray::Array2<F>,
}

pub(crate) fn center_columns<F: Scalar>(x: ndarray::ArrayView2<F>) -> Centered<F> {
    let nf = F::from_usize_lossy(x.nrows().max(1));
    let means = x.sum_axis(ndarray::Axis(0)).mapv(|s| s / nf);
    let centered = &x - &means;
    Centered { means, x: centered }
}
