//! Transfer learning of a target stratum's outcome model.
//!
//! For target `(k, m)` the pipeline fits one penalized logistic model per
//! source group `k' ≠ k` in region `m`, shifts each toward the target with an
//! offset fit on target training rows, fits a target-only model, and picks
//! simplex weights over all candidates by held-out target log-likelihood.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ObservationTable, StratumKey};
use crate::error::{Error, Result};
use crate::glm::{
    cross_validate_lambda, degenerate_fit, fit_penalized_logistic_with, psi, psi_prime, CvConfig, CvSelection, LambdaGrid,
    ModelFit, PenaltyKind, PenaltySpec, Response, SolverOptions,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Share of target-stratum rows held out for the aggregation step.
    pub validation_fraction: f64,
    pub split_seed: u64,
    /// Folds and λ grid shared by source, offset and target-only fits.
    pub cv: CvConfig,
    pub penalty: PenaltyKind,
    /// Whether the offset fit penalizes its intercept shift.
    pub delta_penalize_intercept: bool,
    /// λ grid for the offset fits; `cv.lambda_grid` when unset.
    pub delta_lambda_grid: Option<LambdaGrid>,
    pub min_source_rows: usize,
    pub solver: SolverOptions,
    pub aggregation: AggregationOptions,
    /// Repeat with training and validation roles swapped and average.
    pub swap_and_average: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            validation_fraction: 0.3,
            split_seed: 0,
            cv: CvConfig::default(),
            penalty: PenaltyKind::L2Norm,
            delta_penalize_intercept: false,
            delta_lambda_grid: None,
            min_source_rows: 20,
            solver: SolverOptions::default(),
            aggregation: AggregationOptions::default(),
            swap_and_average: false,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        self.cv.validate()?;
        if let Some(g) = &self.delta_lambda_grid {
            g.resolve(1.0)?;
        }
        Ok(())
    }

    fn penalty_spec(&self) -> PenaltySpec {
        PenaltySpec::new(self.penalty, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationOptions {
    pub max_iter: usize,
    /// Stop once an accepted step improves the mean validation
    /// log-likelihood by less than this.
    pub tol: f64,
}

impl Default for AggregationOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-10,
        }
    }
}

/// Cross-validates λ on `(x, y, offset)` and refits on all rows from a cold start.
pub fn fit_cv_logistic<F: Scalar>(
    x: ArrayView2<F>,
    y: ArrayView1<F>,
    offset: Option<ArrayView1<F>>,
    penalty: &PenaltySpec,
    cv: &CvConfig,
    opts: &SolverOptions,
) -> Result<(ModelFit<F>, CvSelection)> {
    let sel = cross_validate_lambda(x, Response::Binary { y, offset }, penalty, cv, opts)?;
    let fit = fit_penalized_logistic_with(x, y, &penalty.with_lambda(sel.lambda), offset, opts, None)?;
    Ok((fit, sel))
}

fn both_classes<F: Scalar>(y: ArrayView1<F>) -> bool {
    y.iter().any(|&v| v == F::one()) && y.iter().any(|&v| v == F::zero())
}

/// Source models for one target stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceFits<F> {
    pub fits: BTreeMap<usize, ModelFit<F>>,
    pub lambdas: BTreeMap<usize, f64>,
    /// Groups not admitted, with the reason.
    pub excluded: Vec<(usize, String)>,
}

/// Fits a cross-validated penalized logistic model on every admissible
/// source stratum `(k', m)` with `k' ≠ target.k`.
///
/// Sources with fewer than `min_source_rows` rows, a single outcome class,
/// or a fit that fails to converge are excluded and recorded.
pub fn fit_source_models<F: Scalar>(
    data: &ObservationTable<F>,
    target: StratumKey,
    cfg: &TransferConfig,
) -> Result<SourceFits<F>> {
    cfg.validate()?;
    let mut excluded = Vec::new();
    let mut admitted = Vec::new();
    for k in (1..=data.n_groups()).filter(|&k| k != target.k) {
        let rows = data.stratum_rows(StratumKey::new(k, target.m));
        if rows.len() < cfg.min_source_rows {
            excluded.push((k, format!("{} rows < min_source_rows {}", rows.len(), cfg.min_source_rows)));
            continue;
        }
        let (x, y) = data.design(&rows);
        if !both_classes(y.view()) {
            excluded.push((k, "single outcome class".to_string()));
            continue;
        }
        admitted.push((k, x, y));
    }
    let penalty = cfg.penalty_spec();
    let results: Vec<(usize, Result<(ModelFit<F>, CvSelection)>)> = admitted
        .par_iter()
        .map(|(k, x, y)| (*k, fit_cv_logistic(x.view(), y.view(), None, &penalty, &cfg.cv, &cfg.solver)))
        .collect();

    let mut fits = BTreeMap::new();
    let mut lambdas = BTreeMap::new();
    for (k, res) in results {
        match res {
            Ok((fit, _)) if !fit.converged => {
                excluded.push((k, format!("did not converge in {} iterations", fit.iterations)));
            }
            Ok((fit, sel)) => {
                fits.insert(k, fit);
                lambdas.insert(k, sel.lambda);
            }
            Err(e) => excluded.push((k, e.to_string())),
        }
    }
    excluded.sort_by_key(|(k, _)| *k);
    Ok(SourceFits { fits, lambdas, excluded })
}

/// A source model shifted toward the target.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedSource<F> {
    /// `β_src + δ`.
    pub beta: Array1<F>,
    pub delta: Array1<F>,
    pub lambda_delta: f64,
}

/// Fits `δ` minimizing `(1/n)·NLL(β_src + b) + λ_δ·‖b‖` on target training
/// rows, as a penalized logistic fit with offsets `xᵢᵀβ_src`, with λ_δ chosen
/// by cross-validation on the same rows.
pub fn debias_source<F: Scalar>(
    source_fit: &ModelFit<F>,
    x: ArrayView2<F>,
    y: ArrayView1<F>,
    cfg: &TransferConfig,
) -> Result<DebiasedSource<F>> {
    if y.is_empty() {
        return Err(Error::Input("empty target training split; cannot debias".into()));
    }
    let offset = source_offset(source_fit.beta.view(), x)?;
    let penalty = cfg
        .penalty_spec()
        .with_intercept_penalized(cfg.delta_penalize_intercept);
    let cv = match &cfg.delta_lambda_grid {
        Some(grid) => CvConfig {
            lambda_grid: grid.clone(),
            ..cfg.cv.clone()
        },
        None => cfg.cv.clone(),
    };
    let (fit, sel) = fit_cv_logistic(x, y, Some(offset.view()), &penalty, &cv, &cfg.solver)?;
    Ok(DebiasedSource {
        beta: &source_fit.beta + &fit.beta,
        delta: fit.beta,
        lambda_delta: sel.lambda,
    })
}

fn source_offset<F: Scalar>(beta: ArrayView1<F>, x: ArrayView2<F>) -> Result<Array1<F>> {
    if beta.len() != x.ncols() + 1 {
        return Err(Error::Dimension(format!(
            "source model has {} coefficients, target design {} covariates",
            beta.len(),
            x.ncols()
        )));
    }
    Ok(x.dot(&beta.slice(ndarray::s![1..])).mapv(|v| v + beta[0]))
}

/// Penalized logistic fit on target rows only, with cross-validated λ.
/// A single-class response yields an intercept-only model flagged
/// `degenerate`.
pub fn fit_target_only<F: Scalar>(x: ArrayView2<F>, y: ArrayView1<F>, cfg: &TransferConfig) -> Result<ModelFit<F>> {
    if y.is_empty() {
        return Err(Error::Input("empty target stratum".into()));
    }
    let penalty = cfg.penalty_spec();
    if !both_classes(y) {
        return Ok(degenerate_fit(y, x.ncols(), &penalty));
    }
    Ok(fit_cv_logistic(x, y, None, &penalty, &cfg.cv, &cfg.solver)?.0)
}

/// Result of simplex aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation<F> {
    pub eta: Array1<F>,
    pub beta: Array1<F>,
    /// Validation log-likelihood `Σ [yθ − ψ(θ)]` of each candidate alone.
    pub candidate_loglik: Vec<F>,
    pub loglik: F,
    pub iterations: usize,
}

fn validation_loglik<F: Scalar>(scores: ArrayView2<F>, y: ArrayView1<F>, eta: ArrayView1<F>) -> F {
    scores
        .dot(&eta)
        .iter()
        .zip(y.iter())
        .map(|(&t, &y)| y * t - psi(t))
        .sum()
}

/// Maximizes the validation log-likelihood of `B·η` over the probability
/// simplex by exponentiated-gradient ascent with backtracking.
///
/// `candidates` is `(p+1) × K` with intercepts in row 0. The returned weights
/// are never worse on validation data than the best single candidate.
pub fn aggregate<F: Scalar>(
    candidates: ArrayView2<F>,
    x: ArrayView2<F>,
    y: ArrayView1<F>,
    opts: &AggregationOptions,
) -> Result<Aggregation<F>> {
    let k = candidates.ncols();
    if k == 0 {
        return Err(Error::Input("no aggregation candidates".into()));
    }
    if y.is_empty() {
        return Err(Error::Input("empty validation set".into()));
    }
    if candidates.nrows() != x.ncols() + 1 || x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "candidates {}x{}, validation design {}x{}, outcomes {}",
            candidates.nrows(),
            k,
            x.nrows(),
            x.ncols(),
            y.len()
        )));
    }
    // Z = [1 | X] B, one score column per candidate
    let mut scores = x.dot(&candidates.slice(ndarray::s![1.., ..]));
    scores += &candidates.row(0);

    let candidate_loglik: Vec<F> = (0..k)
        .map(|j| {
            scores
                .column(j)
                .iter()
                .zip(y.iter())
                .map(|(&t, &y)| y * t - psi(t))
                .sum()
        })
        .collect();

    if k == 1 {
        let eta = Array1::from_elem(1, F::one());
        return Ok(Aggregation {
            beta: candidates.column(0).to_owned(),
            eta,
            loglik: candidate_loglik[0],
            candidate_loglik,
            iterations: 0,
        });
    }

    let n_inv = F::one() / F::from_usize_lossy(y.len());
    let tol = F::lit(opts.tol);
    let mut eta = Array1::from_elem(k, F::one() / F::from_usize_lossy(k));
    let mut value = validation_loglik(scores.view(), y, eta.view()) * n_inv;
    let zmax = scores.iter().fold(F::zero(), |a, &b| a.max(b.abs())).max(F::lit(1e-8));
    let mut step = F::one() / zmax;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let theta = scores.dot(&eta);
        let resid = Array1::from_iter(theta.iter().zip(y.iter()).map(|(&t, &y)| y - psi_prime(t)));
        let grad = scores.t().dot(&resid) * n_inv;
        let gmax = grad.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = Array1::from_iter(eta.iter().zip(grad.iter()).map(|(&e, &g)| e * (step * (g - gmax)).exp()));
            let z = cand.sum();
            cand.mapv_inplace(|v| v / z);
            let v = validation_loglik(scores.view(), y, cand.view()) * n_inv;
            if v >= value {
                accepted = Some((cand, v));
                break;
            }
            step = step * F::lit(0.5);
        }
        let Some((cand, v)) = accepted else { break };
        let gain = v - value;
        eta = cand;
        value = v;
        step = step * F::lit(1.5);
        if gain < tol {
            break;
        }
    }

    let mut loglik = value / n_inv;
    let (best_j, best_ll) = candidate_loglik
        .iter()
        .enumerate()
        .fold((0, F::neg_infinity()), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
    if best_ll > loglik {
        eta = Array1::zeros(k);
        eta[best_j] = F::one();
        loglik = best_ll;
    }
    let beta = candidates.dot(&eta);
    Ok(Aggregation {
        eta,
        beta,
        candidate_loglik,
        loglik,
        iterations,
    })
}

/// Column label of the candidate matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Candidate {
    Source(usize),
    TargetOnly,
}

/// Everything produced by one transfer fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferResult<F> {
    pub target: StratumKey,
    /// `(p+1) × K'`: debiased sources in ascending group order, then the
    /// target-only model.
    pub candidates: Array2<F>,
    pub candidate_labels: Vec<Candidate>,
    pub source_fits: BTreeMap<usize, ModelFit<F>>,
    pub delta_per_source: BTreeMap<usize, Array1<F>>,
    pub lambda_delta: BTreeMap<usize, f64>,
    pub target_only: ModelFit<F>,
    pub eta: Array1<F>,
    pub beta_agg: Array1<F>,
    pub candidate_validation_loglik: Vec<F>,
    pub validation_loglik: Option<F>,
    pub admitted_sources: Vec<usize>,
    pub excluded_sources: Vec<(usize, String)>,
    /// Table row indices used by the source-shift and target-only fits.
    pub train_rows: Vec<usize>,
    /// Table row indices reserved for aggregation.
    pub validation_rows: Vec<usize>,
}

impl<F: Scalar> TransferResult<F> {
    /// `μ̂(x) = ψ'(xᵀβ_agg)`.
    pub fn outcome_model(&self) -> ModelFit<F> {
        ModelFit::from_beta(self.beta_agg.clone())
    }

    pub fn predict(&self, x: ArrayView1<F>) -> F {
        psi_prime(self.beta_agg[0] + self.beta_agg.slice(ndarray::s![1..]).dot(&x))
    }
}

/// Seeded outcome-stratified split of `0..y.len()` into (train, validation)
/// positions, both sorted.
pub fn split_positions<F: Scalar>(y: ArrayView1<F>, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [F::zero(), F::one()] {
        let mut pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        pos.shuffle(&mut rng);
        let take = ((pos.len() as f64) * fraction).round() as usize;
        val.extend_from_slice(&pos[..take]);
        train.extend_from_slice(&pos[take..]);
    }
    if val.is_empty() && train.len() > 1 {
        val.push(train.pop().expect("nonempty"));
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Runs the full transfer pipeline for `target`.
///
/// With no admissible source the result is the target-only fit on every
/// target row, with `η = (1)` and no validation rows.
pub fn transfer_fit<F: Scalar>(
    data: &ObservationTable<F>,
    target: StratumKey,
    cfg: &TransferConfig,
) -> Result<TransferResult<F>> {
    transfer_fit_split(data, target, cfg, false)
}

fn transfer_fit_split<F: Scalar>(
    data: &ObservationTable<F>,
    target: StratumKey,
    cfg: &TransferConfig,
    swap: bool,
) -> Result<TransferResult<F>> {
    cfg.validate()?;
    let rows = data.stratum_rows(target);
    if rows.is_empty() {
        return Err(Error::Input(format!(
            "target stratum (k={}, m={}) has no rows",
            target.k, target.m
        )));
    }
    let sources = fit_source_models(data, target, cfg)?;
    let (x_all, y_all) = data.design(&rows);

    if sources.fits.is_empty() {
        let fit = fit_target_only(x_all.view(), y_all.view(), cfg)?;
        return Ok(target_only_result(target, fit, sources, rows));
    }

    let (mut train_pos, mut val_pos) = split_positions(y_all.view(), cfg.validation_fraction, cfg.split_seed);
    if swap {
        std::mem::swap(&mut train_pos, &mut val_pos);
    }
    if train_pos.is_empty() || val_pos.is_empty() {
        return Err(Error::Input(format!(
            "target stratum (k={}, m={}) with {} rows is too small to split",
            target.k,
            target.m,
            rows.len()
        )));
    }
    let train_rows: Vec<usize> = train_pos.iter().map(|&i| rows[i]).collect();
    let validation_rows: Vec<usize> = val_pos.iter().map(|&i| rows[i]).collect();
    let x_train = x_all.select(Axis(0), &train_pos);
    let y_train = y_all.select(Axis(0), &train_pos);
    let x_val = x_all.select(Axis(0), &val_pos);
    let y_val = y_all.select(Axis(0), &val_pos);

    let debiased: Vec<(usize, Result<DebiasedSource<F>>)> = sources
        .fits
        .par_iter()
        .map(|(&k, fit)| (k, debias_source(fit, x_train.view(), y_train.view(), cfg)))
        .collect();
    let target_only = fit_target_only(x_train.view(), y_train.view(), cfg)?;

    let p = data.p();
    let mut labels = Vec::new();
    let mut columns: Vec<Array1<F>> = Vec::new();
    let mut delta_per_source = BTreeMap::new();
    let mut lambda_delta = BTreeMap::new();
    for (k, res) in debiased {
        let d = res?;
        labels.push(Candidate::Source(k));
        columns.push(d.beta);
        delta_per_source.insert(k, d.delta);
        lambda_delta.insert(k, d.lambda_delta);
    }
    labels.push(Candidate::TargetOnly);
    columns.push(target_only.beta.clone());
    let mut candidates = Array2::zeros((p + 1, columns.len()));
    for (j, c) in columns.iter().enumerate() {
        candidates.column_mut(j).assign(c);
    }

    let agg = aggregate(candidates.view(), x_val.view(), y_val.view(), &cfg.aggregation)?;
    Ok(TransferResult {
        target,
        candidates,
        candidate_labels: labels,
        admitted_sources: sources.fits.keys().copied().collect(),
        source_fits: sources.fits,
        delta_per_source,
        lambda_delta,
        target_only,
        eta: agg.eta,
        beta_agg: agg.beta,
        candidate_validation_loglik: agg.candidate_loglik,
        validation_loglik: Some(agg.loglik),
        excluded_sources: sources.excluded,
        train_rows,
        validation_rows,
    })
}

fn target_only_result<F: Scalar>(
    target: StratumKey,
    fit: ModelFit<F>,
    sources: SourceFits<F>,
    rows: Vec<usize>,
) -> TransferResult<F> {
    let p1 = fit.beta.len();
    let candidates = fit.beta.clone().into_shape_with_order((p1, 1)).expect("column");
    TransferResult {
        target,
        candidates,
        candidate_labels: vec![Candidate::TargetOnly],
        source_fits: BTreeMap::new(),
        delta_per_source: BTreeMap::new(),
        lambda_delta: BTreeMap::new(),
        eta: Array1::from_elem(1, F::one()),
        beta_agg: fit.beta.clone(),
        target_only: fit,
        candidate_validation_loglik: Vec::new(),
        validation_loglik: None,
        admitted_sources: Vec::new(),
        excluded_sources: sources.excluded,
        train_rows: rows,
        validation_rows: Vec::new(),
    }
}

/// Two transfer fits with training and validation roles exchanged, and the
/// average of their aggregated coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SwappedTransfer<F> {
    pub passes: [TransferResult<F>; 2],
    pub beta: Array1<F>,
}

/// Runs [`transfer_fit`] and a second pass where the validation rows train
/// the shift and target-only fits and the training rows choose the weights.
pub fn transfer_fit_swapped<F: Scalar>(
    data: &ObservationTable<F>,
    target: StratumKey,
    cfg: &TransferConfig,
) -> Result<SwappedTransfer<F>> {
    let first = transfer_fit(data, target, cfg)?;
    if first.validation_rows.is_empty() {
        let beta = first.beta_agg.clone();
        return Ok(SwappedTransfer {
            passes: [first.clone(), first],
            beta,
        });
    }
    let second = transfer_fit_split(data, target, cfg, true)?;
    let half = F::lit(0.5);
    let beta = (&first.beta_agg + &second.beta_agg) * half;
    Ok(SwappedTransfer {
        passes: [first, second],
        beta,
    })
}
