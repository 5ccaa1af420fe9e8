//! K-fold cross-validated choice of the penalty level.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::family::psi;
use super::logistic::{degenerate_fit, fit_penalized_logistic_with, lambda_max, linear_predictor_one};
use super::multinomial::{fit_penalized_multinomial_with, mean_nll, MultinomialFit};
use super::penalty::PenaltySpec;
use super::solver::SolverOptions;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Candidate penalty levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LambdaGrid {
    /// `points` values log-spaced over `[lo, hi]`, multiplied by the
    /// problem's gradient-at-null scale.
    Auto { points: usize, lo: f64, hi: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Auto {
            points: 20,
            lo: 1e-4,
            hi: 1e1,
        }
    }
}

impl LambdaGrid {
    pub fn explicit(values: &[f64]) -> Self {
        LambdaGrid::Explicit {
            values: values.to_vec(),
        }
    }

    /// Concrete grid, sorted descending.
    pub fn resolve(&self, scale: f64) -> Result<Vec<f64>> {
        let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
        let mut values = match self {
            LambdaGrid::Auto { points, lo, hi } => {
                if *points == 0 || !(*lo > 0.0) || !(*hi >= *lo) {
                    return Err(Error::Config(format!(
                        "auto lambda grid needs points >= 1 and 0 < lo <= hi, got {points}, {lo}, {hi}"
                    )));
                }
                if *points == 1 {
                    vec![hi * scale]
                } else {
                    let (a, b) = (lo.ln(), hi.ln());
                    (0..*points)
                        .map(|i| (b + (a - b) * i as f64 / (*points - 1) as f64).exp() * scale)
                        .collect()
                }
            }
            LambdaGrid::Explicit { values } => values.clone(),
        };
        if values.is_empty() {
            return Err(Error::Config("lambda grid is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("lambda grid value {v} is not strictly positive")));
        }
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite grid"));
        values.dedup();
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub n_folds: usize,
    pub lambda_grid: LambdaGrid,
    pub fold_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            lambda_grid: LambdaGrid::default(),
            fold_seed: 0,
        }
    }
}

impl CvConfig {
    pub fn with_seed(self, fold_seed: u64) -> Self {
        Self { fold_seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::Config(format!("n_folds must be >= 2, got {}", self.n_folds)));
        }
        self.lambda_grid.resolve(1.0).map(|_| ())
    }
}

/// Response for cross-validation.
#[derive(Debug, Clone, Copy)]
pub enum Response<'a, F> {
    Binary {
        y: ArrayView1<'a, F>,
        offset: Option<ArrayView1<'a, F>>,
    },
    Multinomial {
        labels: &'a [usize],
        n_categories: usize,
    },
}

impl<F: Scalar> Response<'_, F> {
    fn len(&self) -> usize {
        match self {
            Response::Binary { y, .. } => y.len(),
            Response::Multinomial { labels, .. } => labels.len(),
        }
    }

    fn class_of(&self, i: usize) -> usize {
        match self {
            Response::Binary { y, .. } => usize::from(y[i] == F::one()),
            Response::Multinomial { labels, .. } => labels[i],
        }
    }
}

/// Selected λ with the full validation path.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSelection {
    pub lambda: f64,
    /// Grid, descending.
    pub grid: Vec<f64>,
    /// Pooled mean held-out negative log-likelihood per grid value.
    pub mean_nll: Vec<f64>,
}

/// Fold index per row, stratified by outcome class and seeded.
pub fn stratified_folds<F: Scalar>(response: &Response<'_, F>, n_folds: usize, seed: u64) -> Vec<usize> {
    let n = response.len();
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        by_class.entry(response.class_of(i)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0usize; n];
    let mut next = 0usize;
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        for &i in rows.iter() {
            folds[i] = next % n_folds;
            next += 1;
        }
    }
    folds
}

/// Gradient-at-null scale used by [`LambdaGrid::Auto`].
pub fn lambda_scale<F: Scalar>(x: ArrayView2<F>, response: &Response<'_, F>, penalty: &PenaltySpec) -> Result<f64> {
    let v = match *response {
        Response::Binary { y, offset } => lambda_max(x, y, offset, penalty.penalize_intercept)?,
        Response::Multinomial { labels, n_categories } => {
            let n = labels.len();
            let mut freq = vec![F::zero(); n_categories];
            for &m in labels {
                freq[m - 1] = freq[m - 1] + F::one();
            }
            let nf = F::from_usize_lossy(n.max(1));
            freq.iter_mut().for_each(|f| *f = *f / nf);
            let mut resid = Array2::zeros((n, n_categories));
            for (i, &m) in labels.iter().enumerate() {
                for c in 0..n_categories {
                    resid[[i, c]] = freq[c];
                }
                resid[[i, m - 1]] = resid[[i, m - 1]] - F::one();
            }
            let g = x.t().dot(&resid) / nf;
            g.iter().map(|&v| v * v).sum::<F>().sqrt()
        }
    };
    Ok(v.to_f64().unwrap_or(1.0))
}

/// Chooses λ from the grid by minimizing the pooled mean held-out negative
/// log-likelihood over stratified folds; ties go to the larger λ.
///
/// Folds are fit along the descending grid with warm starts. Fold results are
/// reduced in fold order, so the answer does not depend on thread scheduling.
pub fn cross_validate_lambda<F: Scalar>(
    x: ArrayView2<F>,
    response: Response<'_, F>,
    penalty: &PenaltySpec,
    cv: &CvConfig,
    opts: &SolverOptions,
) -> Result<CvSelection> {
    cv.validate()?;
    let n = response.len();
    if x.nrows() != n {
        return Err(Error::Dimension(format!("design has {} rows, response {n}", x.nrows())));
    }
    if n < cv.n_folds {
        return Err(Error::Input(format!(
            "{n} rows is fewer than {} folds",
            cv.n_folds
        )));
    }
    let grid = cv.lambda_grid.resolve(lambda_scale(x, &response, penalty)?)?;
    if grid.len() == 1 {
        return Ok(CvSelection {
            lambda: grid[0],
            grid,
            mean_nll: vec![f64::NAN],
        });
    }
    let folds = stratified_folds(&response, cv.n_folds, cv.fold_seed);

    let per_fold: Vec<Vec<F>> = (0..cv.n_folds)
        .into_par_iter()
        .map(|f| fold_path(x, &response, penalty, opts, &grid, &folds, f))
        .collect::<Result<_>>()?;

    let mut totals = vec![F::zero(); grid.len()];
    for fold in &per_fold {
        for (t, v) in totals.iter_mut().zip(fold) {
            *t = *t + *v;
        }
    }
    let nf = F::from_usize_lossy(n);
    let mean_nll: Vec<f64> = totals.iter().map(|t| (*t / nf).to_f64().unwrap_or(f64::NAN)).collect();

    let mut best = 0;
    for j in 1..grid.len() {
        if mean_nll[j] < mean_nll[best] - 1e-12 * mean_nll[best].abs() {
            best = j;
        }
    }
    Ok(CvSelection {
        lambda: grid[best],
        grid,
        mean_nll,
    })
}

fn fold_path<F: Scalar>(
    x: ArrayView2<F>,
    response: &Response<'_, F>,
    penalty: &PenaltySpec,
    opts: &SolverOptions,
    grid: &[f64],
    folds: &[usize],
    fold: usize,
) -> Result<Vec<F>> {
    let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
    let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
    let x_train = x.select(Axis(0), &train);
    let x_test = x.select(Axis(0), &test);
    let mut out = Vec::with_capacity(grid.len());
    match *response {
        Response::Binary { y, offset } => {
            let y_train = y.select(Axis(0), &train);
            let o_train = offset.map(|o| o.select(Axis(0), &train));
            let single_class = o_train.is_none() && y_train.iter().all(|&v| v == y_train[0]);
            let mut warm: Option<Array1<F>> = None;
            for &lambda in grid {
                let pen = penalty.with_lambda(lambda);
                let beta = if single_class {
                    degenerate_fit(y_train.view(), x.ncols(), &pen).beta
                } else {
                    let fit = fit_penalized_logistic_with(
                        x_train.view(),
                        y_train.view(),
                        &pen,
                        o_train.as_ref().map(|o| o.view()),
                        opts,
                        warm.as_ref().map(|w| w.view()),
                    )?;
                    fit.beta
                };
                let nll: F = test
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| {
                        let t = linear_predictor_one(beta.view(), x_test.row(r)) + offset.map_or(F::zero(), |o| o[i]);
                        psi(t) - y[i] * t
                    })
                    .sum();
                out.push(nll);
                warm = Some(beta);
            }
        }
        Response::Multinomial { labels, n_categories } => {
            let l_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let l_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            let mut warm: Option<MultinomialFit<F>> = None;
            for &lambda in grid {
                let fit = fit_penalized_multinomial_with(
                    x_train.view(),
                    &l_train,
                    n_categories,
                    &penalty.with_lambda(lambda),
                    opts,
                    warm.as_ref(),
                )?;
                out.push(mean_nll(&fit, x_test.view(), &l_test) * F::from_usize_lossy(test.len()));
                warm = Some(fit);
            }
        }
    }
    Ok(out)
}
