//! Penalized multinomial logistic regression against a reference category.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::family::LinkFamily;
use super::penalty::PenaltySpec;
use super::solver::{center_columns, gram_spectral_bound, minimize, Prox, SmoothLoss, SolverOptions};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fitted multinomial-logit model.
///
/// `coef` is `(p+1) × (C−1)`: row 0 holds intercepts, column `c` belongs to
/// `categories[c+1]`. The reference category `categories[0]` (the smallest
/// present label) has score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialFit<F> {
    pub coef: Array2<F>,
    pub categories: Vec<usize>,
    pub n_categories: usize,
    pub family: LinkFamily,
    pub penalty: PenaltySpec,
    pub objective_value: F,
    pub converged: bool,
    pub iterations: usize,
    /// Labels in `1..=n_categories` absent from the training data.
    pub missing_categories: Vec<usize>,
}

impl<F: Scalar> MultinomialFit<F> {
    /// Builds a model from fixed coefficients over all `coef.ncols() + 1`
    /// categories, reference category 1.
    pub fn from_coefficients(coef: Array2<F>) -> Self {
        let m = coef.ncols() + 1;
        Self {
            coef,
            categories: (1..=m).collect(),
            n_categories: m,
            family: LinkFamily::MultinomialLogit,
            penalty: PenaltySpec::none(),
            objective_value: F::zero(),
            converged: true,
            iterations: 0,
            missing_categories: Vec::new(),
        }
    }

    pub fn p(&self) -> usize {
        self.coef.nrows() - 1
    }

    /// Class probabilities over labels `1..=n_categories` for one row;
    /// absent categories get probability 0.
    pub fn predict_one(&self, x: ArrayView1<F>) -> Array1<F> {
        let mut scores = Array1::zeros(self.categories.len());
        for c in 0..self.coef.ncols() {
            scores[c + 1] = self.coef[[0, c]] + self.coef.slice(s![1.., c]).dot(&x);
        }
        let probs = softmax(scores.view());
        let mut out = Array1::zeros(self.n_categories);
        for (c, &label) in self.categories.iter().enumerate() {
            out[label - 1] = probs[c];
        }
        out
    }

    /// `n × n_categories` probability matrix; rows sum to 1.
    pub fn predict_proba(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        if x.ncols() != self.p() {
            return Err(Error::Dimension(format!(
                "model expects {} covariates, design has {}",
                self.p(),
                x.ncols()
            )));
        }
        let mut out = Array2::zeros((x.nrows(), self.n_categories));
        for (i, row) in x.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.predict_one(row));
        }
        Ok(out)
    }
}

fn softmax<F: Scalar>(scores: ArrayView1<F>) -> Array1<F> {
    let max = scores.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let e = scores.mapv(|s| (s - max).exp());
    let z = e.sum();
    e / z
}

struct MultinomialLoss<'a, F> {
    x: ArrayView2<'a, F>,
    /// Index into the present categories per row.
    class: Vec<usize>,
    n_classes: usize,
    inv_n: F,
    lipschitz: F,
}

impl<F: Scalar> MultinomialLoss<'_, F> {
    fn free(&self) -> usize {
        self.n_classes - 1
    }

    fn scores(&self, b: ArrayView1<F>) -> Array2<F> {
        let p = self.x.ncols();
        let coef = b.into_shape_with_order((p + 1, self.free())).expect("contiguous parameters");
        let mut sc = self.x.dot(&coef.slice(s![1.., ..]));
        sc += &coef.row(0);
        sc
    }

    /// Per-row `log Σ exp(score)` including the reference score 0.
    fn row_terms(&self, sc: &Array2<F>) -> (F, Array2<F>) {
        let mut total = F::zero();
        let mut probs = Array2::zeros(sc.raw_dim());
        for (i, row) in sc.rows().into_iter().enumerate() {
            let max = row.iter().fold(F::zero(), |a, &b| a.max(b));
            let mut z = (-max).exp();
            for &v in row.iter() {
                z = z + (v - max).exp();
            }
            let lse = max + z.ln();
            let c = self.class[i];
            let own = if c == 0 { F::zero() } else { row[c - 1] };
            total = total + lse - own;
            for (j, &v) in row.iter().enumerate() {
                probs[[i, j]] = (v - lse).exp();
            }
        }
        (total, probs)
    }
}

impl<F: Scalar> SmoothLoss<F> for MultinomialLoss<'_, F> {
    fn dim(&self) -> usize {
        (self.x.ncols() + 1) * self.free()
    }

    fn value(&self, b: ArrayView1<F>) -> F {
        let sc = self.scores(b);
        self.row_terms(&sc).0 * self.inv_n
    }

    fn value_grad(&self, b: ArrayView1<F>, grad: &mut Array1<F>) -> F {
        let sc = self.scores(b);
        let (total, mut resid) = self.row_terms(&sc);
        for (i, &c) in self.class.iter().enumerate() {
            if c > 0 {
                resid[[i, c - 1]] = resid[[i, c - 1]] - F::one();
            }
        }
        let p = self.x.ncols();
        let free = self.free();
        let slope_grad = self.x.t().dot(&resid);
        let icpt = resid.sum_axis(Axis(0));
        for c in 0..free {
            grad[c] = icpt[c] * self.inv_n;
            for j in 0..p {
                grad[(j + 1) * free + c] = slope_grad[[j, c]] * self.inv_n;
            }
        }
        total * self.inv_n
    }

    fn lipschitz(&self) -> F {
        self.lipschitz
    }
}

/// Penalized multinomial-logit fit of `labels ∈ 1..=n_categories` on `x`.
///
/// The penalty applies to the whole slope block (intercept row excluded
/// unless `penalize_intercept`), so the unsquared norm is a single group.
pub fn fit_penalized_multinomial<F: Scalar>(
    x: ArrayView2<F>,
    labels: &[usize],
    n_categories: usize,
    penalty: &PenaltySpec,
) -> Result<MultinomialFit<F>> {
    fit_penalized_multinomial_with(x, labels, n_categories, penalty, &SolverOptions::default(), None)
}

pub fn fit_penalized_multinomial_with<F: Scalar>(
    x: ArrayView2<F>,
    labels: &[usize],
    n_categories: usize,
    penalty: &PenaltySpec,
    opts: &SolverOptions,
    warm_start: Option<&MultinomialFit<F>>,
) -> Result<MultinomialFit<F>> {
    penalty.validate()?;
    if labels.is_empty() {
        return Err(Error::Input("no rows to fit".into()));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, labels {}",
            x.nrows(),
            labels.len()
        )));
    }
    if let Some(i) = labels.iter().position(|&m| m == 0 || m > n_categories) {
        return Err(Error::Input(format!(
            "row {i}: label {} outside 1..={n_categories}",
            labels[i]
        )));
    }
    let mut counts = vec![0usize; n_categories];
    for &m in labels {
        counts[m - 1] += 1;
    }
    let categories: Vec<usize> = (1..=n_categories).filter(|&m| counts[m - 1] > 0).collect();
    if categories.len() < 2 {
        return Err(Error::Input("multinomial fit needs at least two distinct labels".into()));
    }
    let missing_categories: Vec<usize> = (1..=n_categories).filter(|&m| counts[m - 1] == 0).collect();
    let mut index = vec![usize::MAX; n_categories + 1];
    for (c, &m) in categories.iter().enumerate() {
        index[m] = c;
    }
    let class: Vec<usize> = labels.iter().map(|&m| index[m]).collect();

    let p = x.ncols();
    let free = categories.len() - 1;
    let x0 = match warm_start {
        Some(w) if w.categories == categories && w.coef.nrows() == p + 1 => {
            Array1::from_iter(w.coef.iter().copied())
        }
        _ => {
            let mut b = Array1::zeros((p + 1) * free);
            let ref_count = F::from_usize_lossy(counts[categories[0] - 1]);
            for c in 0..free {
                b[c] = (F::from_usize_lossy(counts[categories[c + 1] - 1]) / ref_count).ln();
            }
            b
        }
    };
    let mut penalized = vec![true; (p + 1) * free];
    for v in penalized.iter_mut().take(free) {
        *v = penalty.penalize_intercept;
    }
    let centered = (!penalty.penalize_intercept && p > 0).then(|| center_columns(x));
    let mut x0 = x0;
    if let Some(c) = &centered {
        for k in 0..free {
            let shift: F = (0..p).map(|j| c.means[j] * x0[(j + 1) * free + k]).sum();
            x0[k] = x0[k] + shift;
        }
    }
    let x = centered.as_ref().map_or(x, |c| c.x.view());
    let loss = MultinomialLoss {
        x,
        class,
        n_classes: categories.len(),
        inv_n: F::one() / F::from_usize_lossy(labels.len()),
        lipschitz: F::lit(0.5) * gram_spectral_bound(x),
    };
    let sol = minimize(
        &loss,
        &Prox {
            penalty,
            penalized: &penalized,
        },
        x0,
        opts,
    );
    let mut coef = sol
        .x
        .into_shape_with_order((p + 1, free))
        .expect("parameter length matches shape");
    if let Some(c) = &centered {
        for k in 0..free {
            let shift = c.means.dot(&coef.slice(s![1.., k]));
            coef[[0, k]] = coef[[0, k]] - shift;
        }
    }
    Ok(MultinomialFit {
        coef,
        categories,
        n_categories,
        family: LinkFamily::MultinomialLogit,
        penalty: *penalty,
        objective_value: sol.objective,
        converged: sol.converged,
        iterations: sol.iterations,
        missing_categories,
    })
}

/// Mean multinomial negative log-likelihood of `labels` under `fit`, with a
/// floor on probabilities of labels the model gives zero mass.
pub(crate) fn mean_nll<F: Scalar>(fit: &MultinomialFit<F>, x: ArrayView2<F>, labels: &[usize]) -> F {
    let floor = F::lit(1e-300).max(F::min_positive_value());
    let total: F = x
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &m)| -fit.predict_one(row)[m - 1].max(floor).ln())
        .sum();
    total / F::from_usize_lossy(labels.len().max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn intercept_only_two_classes() {
        let x = Array2::<f64>::zeros((6, 0));
        let fit = fit_penalized_multinomial(x.view(), &[1, 2, 1, 2, 2, 1], 2, &PenaltySpec::none()).unwrap();
        let p = fit.predict_proba(x.view()).unwrap();
        for row in p.rows() {
            assert!((row[0] - 0.5).abs() < 1e-12 && (row[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn intercept_only_four_classes() {
        let x = Array2::<f64>::zeros((8, 0));
        let fit = fit_penalized_multinomial(x.view(), &[1, 2, 3, 4, 4, 3, 2, 1], 4, &PenaltySpec::none()).unwrap();
        let p = fit.predict_proba(x.view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn zero_coefficients_uniform() {
        let fit = MultinomialFit::from_coefficients(Array2::<f64>::zeros((3, 4)));
        let x = array![[1.0, -2.0], [0.3, 0.7]];
        let p = fit.predict_proba(x.view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn rows_sum_to_one() {
        let x = array![[0.2f64, 1.0], [-1.0, 0.5], [0.4, -0.3], [1.5, 0.0], [-0.5, -1.1], [0.9, 0.8], [0.0, 0.1]];
        let labels = [1, 2, 3, 3, 1, 2, 3];
        let fit = fit_penalized_multinomial(x.view(), &labels, 3, &PenaltySpec::squared_l2(0.05)).unwrap();
        assert!(fit.converged);
        let p = fit.predict_proba(x.view()).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_category_flagged() {
        let x = array![[0.2], [-1.0], [0.4], [1.5]];
        let fit = fit_penalized_multinomial(x.view(), &[1, 3, 3, 1], 3, &PenaltySpec::squared_l2(0.1)).unwrap();
        assert_eq!(fit.missing_categories, vec![2]);
        let p = fit.predict_proba(x.view()).unwrap();
        assert!(p.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_class_rejected() {
        let x = array![[0.2], [-1.0]];
        assert!(matches!(
            fit_penalized_multinomial(x.view(), &[2, 2], 3, &PenaltySpec::none()),
            Err(Error::Input(_))
        ));
    }
}
