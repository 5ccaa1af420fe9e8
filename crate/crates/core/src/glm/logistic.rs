//! Penalized binary logistic regression with an always-present, by default
//! unpenalized, intercept and optional per-row offsets.

use ndarray::{s, Array1, ArrayView1, ArrayView2};

use super::family::{psi, psi_prime, LinkFamily};
use super::penalty::PenaltySpec;
use super::solver::{center_columns, gram_spectral_bound, minimize, Prox, SmoothLoss, SolverOptions};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A fitted binary-logit model. `beta[0]` is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit<F> {
    pub beta: Array1<F>,
    pub family: LinkFamily,
    pub penalty: PenaltySpec,
    pub offset_used: bool,
    pub objective_value: F,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the response had a single class and only an intercept was fit.
    pub degenerate: bool,
}

impl<F: Scalar> ModelFit<F> {
    /// Wraps fixed coefficients (intercept first) as an unfitted model.
    pub fn from_beta(beta: Array1<F>) -> Self {
        Self {
            beta,
            family: LinkFamily::BinaryLogit,
            penalty: PenaltySpec::none(),
            offset_used: false,
            objective_value: F::zero(),
            converged: true,
            iterations: 0,
            degenerate: false,
        }
    }

    pub fn intercept(&self) -> F {
        self.beta[0]
    }

    pub fn slopes(&self) -> ArrayView1<'_, F> {
        self.beta.slice(s![1..])
    }

    /// Number of covariates the model expects (excluding the intercept).
    pub fn p(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn predict_one(&self, x: ArrayView1<F>) -> F {
        psi_prime(linear_predictor_one(self.beta.view(), x))
    }

    pub fn predict_proba(&self, x: ArrayView2<F>, offset: Option<ArrayView1<F>>) -> Result<Array1<F>> {
        predict_proba(self.beta.view(), x, offset)
    }
}

#[inline]
pub(crate) fn linear_predictor_one<F: Scalar>(beta: ArrayView1<F>, x: ArrayView1<F>) -> F {
    beta[0] + beta.slice(s![1..]).dot(&x)
}

fn check_dims<F: Scalar>(
    beta_len: usize,
    x: ArrayView2<F>,
    rows: usize,
    offset: Option<ArrayView1<F>>,
) -> Result<()> {
    if beta_len != x.ncols() + 1 {
        return Err(Error::Dimension(format!(
            "coefficients have length {beta_len}, design has {} covariates plus intercept",
            x.ncols()
        )));
    }
    if x.nrows() != rows {
        return Err(Error::Dimension(format!(
            "design has {} rows, response has {rows}",
            x.nrows()
        )));
    }
    if let Some(o) = offset {
        if o.len() != rows {
            return Err(Error::Dimension(format!(
                "offset has {} rows, expected {rows}",
                o.len()
            )));
        }
    }
    Ok(())
}

fn linear_predictor<F: Scalar>(
    beta: ArrayView1<F>,
    x: ArrayView2<F>,
    offset: Option<ArrayView1<F>>,
) -> Array1<F> {
    let b0 = beta[0];
    let mut theta = x.dot(&beta.slice(s![1..]));
    match offset {
        Some(o) => theta.zip_mut_with(&o, |t, &o| *t = *t + b0 + o),
        None => theta.mapv_inplace(|t| t + b0),
    }
    theta
}

/// `ψ'(xᵀβ + offset)` per row.
pub fn predict_proba<F: Scalar>(
    beta: ArrayView1<F>,
    x: ArrayView2<F>,
    offset: Option<ArrayView1<F>>,
) -> Result<Array1<F>> {
    check_dims(beta.len(), x, x.nrows(), offset)?;
    Ok(linear_predictor(beta, x, offset).mapv(psi_prime))
}

/// `Σᵢ [ψ(θᵢ) − yᵢθᵢ]` with `θᵢ = xᵢᵀβ + offsetᵢ` (a sum, not a mean).
pub fn negative_log_likelihood<F: Scalar>(
    beta: ArrayView1<F>,
    x: ArrayView2<F>,
    y: ArrayView1<F>,
    offset: Option<ArrayView1<F>>,
) -> Result<F> {
    check_dims(beta.len(), x, y.len(), offset)?;
    let theta = linear_predictor(beta, x, offset);
    Ok(theta
        .iter()
        .zip(y.iter())
        .map(|(&t, &y)| psi(t) - y * t)
        .sum())
}

pub(crate) struct LogisticLoss<'a, F> {
    x: ArrayView2<'a, F>,
    y: ArrayView1<'a, F>,
    offset: Option<ArrayView1<'a, F>>,
    inv_n: F,
    lipschitz: F,
}

impl<'a, F: Scalar> LogisticLoss<'a, F> {
    pub fn new(x: ArrayView2<'a, F>, y: ArrayView1<'a, F>, offset: Option<ArrayView1<'a, F>>) -> Self {
        let inv_n = F::one() / F::from_usize_lossy(y.len().max(1));
        let lipschitz = F::lit(0.25) * gram_spectral_bound(x);
        Self {
            x,
            y,
            offset,
            inv_n,
            lipschitz,
        }
    }
}

impl<F: Scalar> SmoothLoss<F> for LogisticLoss<'_, F> {
    fn dim(&self) -> usize {
        self.x.ncols() + 1
    }

    fn value(&self, b: ArrayView1<F>) -> F {
        let theta = linear_predictor(b, self.x, self.offset);
        let s: F = theta
            .iter()
            .zip(self.y.iter())
            .map(|(&t, &y)| psi(t) - y * t)
            .sum();
        s * self.inv_n
    }

    fn value_grad(&self, b: ArrayView1<F>, grad: &mut Array1<F>) -> F {
        let mut theta = linear_predictor(b, self.x, self.offset);
        let mut total = F::zero();
        theta.zip_mut_with(&self.y, |t, &y| {
            total = total + psi(*t) - y * *t;
            *t = psi_prime(*t) - y;
        });
        grad[0] = theta.sum() * self.inv_n;
        let g = self.x.t().dot(&theta);
        grad.slice_mut(s![1..]).zip_mut_with(&g, |a, &b| *a = b * self.inv_n);
        total * self.inv_n
    }

    fn lipschitz(&self) -> F {
        self.lipschitz
    }
}

fn validate_response<F: Scalar>(y: ArrayView1<F>) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Input("no rows to fit".into()));
    }
    if let Some((i, v)) = y
        .iter()
        .enumerate()
        .find(|(_, &v)| v != F::zero() && v != F::one())
    {
        return Err(Error::Input(format!("row {i}: outcome {v} is not 0/1")));
    }
    Ok(())
}

/// Minimizes `(1/n)·NLL(b; offset) + λ·penalty(b)` with default solver options
/// from a deterministic cold start.
pub fn fit_penalized_logistic<F: Scalar>(
    x: ArrayView2<F>,
    y: ArrayView1<F>,
    penalty: &PenaltySpec,
    offset: Option<ArrayView1<F>>,
) -> Result<ModelFit<F>> {
    fit_penalized_logistic_with(x, y, penalty, offset, &SolverOptions::default(), None)
}

/// As [`fit_penalized_logistic`], with explicit solver options and an
/// optional warm start.
pub fn fit_penalized_logistic_with<F: Scalar>(
    x: ArrayView2<F>,
    y: ArrayView1<F>,
    penalty: &PenaltySpec,
    offset: Option<ArrayView1<F>>,
    opts: &SolverOptions,
    warm_start: Option<ArrayView1<F>>,
) -> Result<ModelFit<F>> {
    validate_response(y)?;
    check_dims(x.ncols() + 1, x, y.len(), offset)?;
    penalty.validate()?;

    let p = x.ncols();
    let x0 = match warm_start {
        Some(w) => {
            if w.len() != p + 1 {
                return Err(Error::Dimension(format!(
                    "warm start has length {}, expected {}",
                    w.len(),
                    p + 1
                )));
            }
            w.to_owned()
        }
        None => cold_start(y, offset, p),
    };
    let mut penalized = vec![true; p + 1];
    penalized[0] = penalty.penalize_intercept;

    let centered = (!penalty.penalize_intercept && p > 0).then(|| center_columns(x));
    let mut x0 = x0;
    if let Some(c) = &centered {
        x0[0] = x0[0] + c.means.dot(&x0.slice(s![1..]));
    }
    let loss = LogisticLoss::new(centered.as_ref().map_or(x, |c| c.x.view()), y, offset);
    let sol = minimize(
        &loss,
        &Prox {
            penalty,
            penalized: &penalized,
        },
        x0,
        opts,
    );
    let mut beta = sol.x;
    if let Some(c) = &centered {
        beta[0] = beta[0] - c.means.dot(&beta.slice(s![1..]));
    }
    Ok(ModelFit {
        beta,
        family: LinkFamily::BinaryLogit,
        penalty: *penalty,
        offset_used: offset.is_some(),
        objective_value: sol.objective,
        converged: sol.converged,
        iterations: sol.iterations,
        degenerate: false,
    })
}

fn cold_start<F: Scalar>(y: ArrayView1<F>, offset: Option<ArrayView1<F>>, p: usize) -> Array1<F> {
    let mut b = Array1::zeros(p + 1);
    if offset.is_none() {
        let n = F::from_usize_lossy(y.len());
        let rate = ((y.sum() + F::lit(0.5)) / (n + F::one())).max(F::lit(1e-6));
        b[0] = (rate / (F::one() - rate)).ln();
    }
    b
}

/// Intercept-only fit for single-class responses: `logit((Σy + ½)/(n + 1))`.
pub(crate) fn degenerate_fit<F: Scalar>(y: ArrayView1<F>, p: usize, penalty: &PenaltySpec) -> ModelFit<F> {
    let n = F::from_usize_lossy(y.len());
    let rate = (y.sum() + F::lit(0.5)) / (n + F::one());
    let mut beta = Array1::zeros(p + 1);
    beta[0] = (rate / (F::one() - rate)).ln();
    ModelFit {
        beta,
        family: LinkFamily::BinaryLogit,
        penalty: *penalty,
        offset_used: false,
        objective_value: F::nan(),
        converged: true,
        iterations: 0,
        degenerate: true,
    }
}

/// Maximizes the likelihood over the intercept alone (other coefficients 0)
/// by safeguarded Newton steps.
pub(crate) fn intercept_only<F: Scalar>(y: ArrayView1<F>, offset: Option<ArrayView1<F>>) -> F {
    let n = y.len();
    let nf = F::from_usize_lossy(n.max(1));
    let ybar = y.sum() / nf;
    let mut b = if offset.is_none() {
        let r = ybar.max(F::lit(1e-12)).min(F::one() - F::lit(1e-12));
        (r / (F::one() - r)).ln()
    } else {
        F::zero()
    };
    for _ in 0..100 {
        let mut g = F::zero();
        let mut h = F::zero();
        for i in 0..n {
            let o = offset.map_or(F::zero(), |o| o[i]);
            let p = psi_prime(b + o);
            g = g + p - y[i];
            h = h + p * (F::one() - p);
        }
        if h <= F::zero() {
            break;
        }
        let stepv = (g / h).max(-F::lit(5.0)).min(F::lit(5.0));
        b = (b - stepv).max(-F::THETA_CLAMP).min(F::THETA_CLAMP);
        if stepv.abs() < F::lit(1e-14) {
            break;
        }
    }
    b
}

/// Smallest λ at which the unsquared-norm penalty zeros the penalized block:
/// the norm of the block gradient of `(1/n)·NLL` at the best block-zero fit.
pub fn lambda_max<F: Scalar>(
    x: ArrayView2<F>,
    y: ArrayView1<F>,
    offset: Option<ArrayView1<F>>,
    penalize_intercept: bool,
) -> Result<F> {
    check_dims(x.ncols() + 1, x, y.len(), offset)?;
    let mut beta = Array1::zeros(x.ncols() + 1);
    if !penalize_intercept {
        beta[0] = intercept_only(y, offset);
    }
    let loss = LogisticLoss::new(x, y, offset);
    let mut grad = Array1::zeros(x.ncols() + 1);
    loss.value_grad(beta.view(), &mut grad);
    let start = if penalize_intercept { 0 } else { 1 };
    Ok(grad.slice(s![start..]).dot(&grad.slice(s![start..])).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn intercept_only_balanced_is_zero() {
        let x = Array2::<f64>::zeros((4, 0));
        let y = array![1.0, 0.0, 1.0, 0.0];
        let fit = fit_penalized_logistic(x.view(), y.view(), &PenaltySpec::none(), None).unwrap();
        assert!(fit.converged);
        assert!(fit.beta[0].abs() < 1e-7, "{}", fit.beta[0]);
    }

    #[test]
    fn zero_beta_predicts_half() {
        let x = array![[1.0, 2.0], [-3.0, 0.5], [0.0, 0.0]];
        let p = predict_proba(Array1::zeros(3).view(), x.view(), None).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn direct_evaluation() {
        // intercept 0, slopes (1, -1), x = (2, 1)
        let beta = array![0.0f64, 1.0, -1.0];
        let x = array![[2.0, 1.0]];
        let p = predict_proba(beta.view(), x.view(), None).unwrap();
        assert!((p[0] - 0.7310586).abs() < 1e-7);
    }

    #[test]
    fn nll_at_zero_is_n_log_two() {
        let x = array![[0.3], [1.0], [-2.0], [0.1], [5.0]];
        let y = array![1.0, 0.0, 0.0, 1.0, 1.0];
        let v = negative_log_likelihood(array![0.0, 0.0].view(), x.view(), y.view(), None).unwrap();
        assert!((v - 5.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_contribution_vanishes() {
        let x = Array2::<f64>::zeros((1, 0));
        let v = negative_log_likelihood(array![1e3].view(), x.view(), array![1.0].view(), None).unwrap();
        assert!(v < 1e-9);
    }

    #[test]
    fn dominating_penalty_zeros_block() {
        let x = array![[0.5, -1.0], [1.5, 0.2], [-0.7, 0.9], [0.1, -0.4], [1.1, 1.3], [-1.2, -0.8]];
        let y = array![1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let fit = fit_penalized_logistic(x.view(), y.view(), &PenaltySpec::l2_norm(1e6), None).unwrap();
        assert!(fit.slopes().iter().all(|&b| b == 0.0));
        let lmax = lambda_max(x.view(), y.view(), None, false).unwrap();
        let fit = fit_penalized_logistic(x.view(), y.view(), &PenaltySpec::l2_norm(lmax * 1.0001), None).unwrap();
        assert!(fit.slopes().iter().all(|&b| b == 0.0));
        let fit = fit_penalized_logistic(x.view(), y.view(), &PenaltySpec::l2_norm(lmax * 0.5), None).unwrap();
        assert!(fit.slopes().iter().any(|&b| b != 0.0));
    }

    #[test]
    fn shifted_column_moves_only_the_intercept() {
        let x: Array2<f64> = array![[0.5, -1.0], [1.5, 0.2], [-0.7, 0.9], [0.1, -0.4], [1.1, 1.3], [-1.2, -0.8], [0.3, 0.3]];
        let y = array![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let mut shifted = x.clone();
        shifted.column_mut(0).mapv_inplace(|v| v + 500.0);
        let pen = PenaltySpec::l2_norm(0.05);
        let a = fit_penalized_logistic(x.view(), y.view(), &pen, None).unwrap();
        let b = fit_penalized_logistic(shifted.view(), y.view(), &pen, None).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.beta[1] - b.beta[1]).abs() < 1e-6 && (a.beta[2] - b.beta[2]).abs() < 1e-6);
        assert!((a.beta[0] - (b.beta[0] + 500.0 * b.beta[1])).abs() < 1e-5);
    }

    #[test]
    fn errors() {
        let x = Array2::<f64>::zeros((0, 1));
        let y = Array1::<f64>::zeros(0);
        assert!(matches!(
            fit_penalized_logistic(x.view(), y.view(), &PenaltySpec::none(), None),
            Err(Error::Input(_))
        ));
        let x = Array2::<f64>::zeros((2, 1));
        let y = array![0.0, 0.5];
        assert!(matches!(
            fit_penalized_logistic(x.view(), y.view(), &PenaltySpec::none(), None),
            Err(Error::Input(_))
        ));
        let y = array![0.0, 1.0];
        let off = array![0.0];
        assert!(matches!(
            fit_penalized_logistic(x.view(), y.view(), &PenaltySpec::none(), Some(off.view())),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            predict_proba(array![0.0].view(), x.view(), None),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let x = array![[0.5f32], [1.5], [-0.7], [0.1], [1.1], [-1.2]];
        let y = array![1.0f32, 1.0, 0.0, 0.0, 1.0, 0.0];
        let opts = SolverOptions {
            tol: 1e-6,
            gtol: 1e-4,
            max_iter: 5000,
        };
        let fit =
            fit_penalized_logistic_with(x.view(), y.view(), &PenaltySpec::squared_l2(0.1), None, &opts, None).unwrap();
        let fit64 = fit_penalized_logistic(
            x.mapv(f64::from).view(),
            y.mapv(f64::from).view(),
            &PenaltySpec::squared_l2(0.1),
            None,
        )
        .unwrap();
        for (a, b) in fit.beta.iter().zip(fit64.beta.iter()) {
            assert!((f64::from(*a) - b).abs() < 1e-3);
        }
    }
}
