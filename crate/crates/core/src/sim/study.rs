use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{compute_true_tatt, replicate_dataset, study_coefficients, Coefficients, DgpConfig, TrueEffects};
use crate::causal::{
    estimate_effects_with, estimate_propensity, ordered_pairs, EffectKind, EffectRequest, OutcomeMethod,
    PipelineConfig, TattEstimate,
};
use crate::data::ObservationTable;
use crate::error::{Error, Result};

/// Replicate-study settings beyond the data-generating design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyOptions {
    pub n_replicates: usize,
    /// Group whose effects are estimated.
    pub target_group: usize,
    pub methods: Vec<OutcomeMethod>,
    pub oracle_n: usize,
    pub oracle_seed: u64,
    /// Abort when more than this share of replicates fail.
    pub max_failure_rate: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            n_replicates: 200,
            target_group: 1,
            methods: vec![OutcomeMethod::Transfer, OutcomeMethod::TargetOnly],
            oracle_n: 10_000_000,
            oracle_seed: 99,
            max_failure_rate: 0.05,
        }
    }
}

/// One `(replicate, pair, method)` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: u64,
    pub m1: usize,
    pub m2: usize,
    pub method: OutcomeMethod,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub truth: f64,
    /// Set when the replicate failed; numeric fields are NaN.
    pub failure: Option<String>,
}

/// Estimates for every ordered pair by every method on one dataset, sharing
/// the region model across methods.
pub fn estimate_replicate(
    data: &ObservationTable<f64>,
    k: usize,
    methods: &[OutcomeMethod],
    cfg: &PipelineConfig,
) -> Result<Vec<(OutcomeMethod, Vec<TattEstimate<f64>>)>> {
    let prop = estimate_propensity(data, k, &cfg.propensity_penalty, cfg.clip)?;
    let requests: Vec<EffectRequest> = ordered_pairs(data.n_regions())
        .into_iter()
        .map(|(m1, m2)| EffectRequest {
            kind: EffectKind::Tatt,
            m1,
            m2,
        })
        .collect();
    methods
        .iter()
        .map(|&method| Ok((method, estimate_effects_with(data, k, &requests, method, &prop, cfg)?)))
        .collect()
}

fn replicate_rows(
    r: u64,
    dgp: &DgpConfig,
    coef: &Coefficients,
    truth: &TrueEffects,
    opts: &StudyOptions,
    cfg: &PipelineConfig,
) -> Vec<ReplicateRow> {
    let pairs = ordered_pairs(dgp.n_regions);
    let run = replicate_dataset(dgp, coef, r).and_then(|d| estimate_replicate(&d, opts.target_group, &opts.methods, cfg));
    match run {
        Ok(per_method) => per_method
            .into_iter()
            .flat_map(|(method, ests)| {
                ests.into_iter().map(move |e| ReplicateRow {
                    replicate: r,
                    m1: e.m1,
                    m2: e.m2,
                    method,
                    estimate: e.point,
                    se: e.se,
                    lower: e.ci.0,
                    upper: e.ci.1,
                    truth: truth.get(e.m1, e.m2),
                    failure: None,
                })
            })
            .collect(),
        Err(err) => opts
            .methods
            .iter()
            .flat_map(|&method| {
                let msg = err.to_string();
                pairs.iter().map(move |&(m1, m2)| ReplicateRow {
                    replicate: r,
                    m1,
                    m2,
                    method,
                    estimate: f64::NAN,
                    se: f64::NAN,
                    lower: f64::NAN,
                    upper: f64::NAN,
                    truth: truth.get(m1, m2),
                    failure: Some(msg.clone()),
                })
            })
            .collect(),
    }
}

/// Output of [`run_replicates`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRun {
    pub rows: Vec<ReplicateRow>,
    /// Truth for the fixed coefficients; `None` when coefficients are redrawn.
    pub truth: Option<TrueEffects>,
    pub failed_replicates: usize,
}

/// Runs replicates `0..n_replicates` in parallel. Replicate `r` depends only
/// on the seeds and `r`; rows come back in replicate order.
pub fn run_replicates(dgp: &DgpConfig, opts: &StudyOptions, cfg: &PipelineConfig) -> Result<StudyRun> {
    dgp.validate()?;
    if opts.target_group == 0 || opts.target_group > dgp.n_groups {
        return Err(Error::Config(format!("target_group {} outside 1..={}", opts.target_group, dgp.n_groups)));
    }
    let fixed = if dgp.redraw_coefficients {
        None
    } else {
        let coef = study_coefficients(dgp, None)?;
        let truth = compute_true_tatt(dgp, &coef, opts.target_group, opts.oracle_n, opts.oracle_seed)?;
        Some((coef, truth))
    };
    let per_rep: Vec<Result<Vec<ReplicateRow>>> = (0..opts.n_replicates as u64)
        .into_par_iter()
        .map(|r| match &fixed {
            Some((coef, truth)) => Ok(replicate_rows(r, dgp, coef, truth, opts, cfg)),
            None => {
                let coef = study_coefficients(dgp, Some(r))?;
                let truth = compute_true_tatt(dgp, &coef, opts.target_group, opts.oracle_n, opts.oracle_seed ^ r)?;
                Ok(replicate_rows(r, dgp, &coef, &truth, opts, cfg))
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut failed = 0;
    for rep in per_rep {
        let rep = rep?;
        if rep.iter().any(|row| row.failure.is_some()) {
            failed += 1;
        }
        rows.extend(rep);
    }
    if opts.n_replicates > 0 && failed as f64 > opts.max_failure_rate * opts.n_replicates as f64 {
        let first = rows.iter().find_map(|r| r.failure.clone()).unwrap_or_default();
        return Err(Error::Computation(format!(
            "{failed} of {} replicates failed (limit {:.1}%); first failure: {first}",
            opts.n_replicates,
            100.0 * opts.max_failure_rate
        )));
    }
    Ok(StudyRun {
        rows,
        truth: fixed.map(|(_, t)| t),
        failed_replicates: failed,
    })
}

/// Bias, RMSE and coverage for one pair and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub m1: usize,
    pub m2: usize,
    pub method: OutcomeMethod,
    pub bias: f64,
    pub bias_x100: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub n_reps: usize,
    pub n_failed: usize,
}

impl MetricsRow {
    /// No usable replicate for this cell.
    pub fn is_missing(&self) -> bool {
        self.n_reps == 0
    }
}

/// Summaries per `(m1, m2, method)`, ordered by pair then method order of
/// first appearance.
pub fn compute_metrics(rows: &[ReplicateRow]) -> Vec<MetricsRow> {
    let mut keys: Vec<(usize, usize, OutcomeMethod)> = Vec::new();
    for r in rows {
        let key = (r.m1, r.m2, r.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let method_rank = |m: OutcomeMethod| keys.iter().position(|k| k.2 == m).unwrap_or(0);
    let mut ordered = keys.clone();
    ordered.sort_by_key(|&(m1, m2, m)| (m1, m2, method_rank(m)));
    ordered
        .into_iter()
        .map(|(m1, m2, method)| {
            let cell: Vec<&ReplicateRow> = rows
                .iter()
                .filter(|r| r.m1 == m1 && r.m2 == m2 && r.method == method)
                .collect();
            let ok: Vec<&&ReplicateRow> = cell.iter().filter(|r| r.failure.is_none()).collect();
            let n = ok.len();
            let (bias, rmse, coverage) = if n == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let nf = n as f64;
                let bias = ok.iter().map(|r| r.estimate - r.truth).sum::<f64>() / nf;
                let mse = ok.iter().map(|r| (r.estimate - r.truth).powi(2)).sum::<f64>() / nf;
                let cov = ok.iter().filter(|r| r.lower <= r.truth && r.truth <= r.upper).count() as f64 / nf;
                (bias, mse.sqrt(), cov)
            };
            MetricsRow {
                m1,
                m2,
                method,
                bias,
                bias_x100: 100.0 * bias,
                rmse,
                coverage,
                n_reps: n,
                n_failed: cell.len() - n,
            }
        })
        .collect()
}
