use std::collections::BTreeMap;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimator::{
    dr_components, estimate_from_components, DrComponents, EffectKind, OutcomeMethod, OutcomeModel, TattEstimate,
    VarianceMethod,
};
use super::propensity::{default_propensity_penalty, estimate_propensity, ClipBounds, PropensityModel};
use crate::data::{ObservationTable, StratumKey};
use crate::error::{Error, Result};
use crate::glm::{ModelFit, PenaltySpec};
use crate::scalar::Scalar;
use crate::transfer::{fit_target_only, transfer_fit, TransferConfig, TransferResult};

/// Settings for a full nuisance-fit plus estimation run on one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub transfer: TransferConfig,
    pub propensity_penalty: PenaltySpec,
    pub clip: ClipBounds,
    pub variance: VarianceMethod,
    /// Evaluate residuals on counterfactual rows with outcome models fit
    /// without those rows (two folds).
    pub cross_fit: bool,
    pub cross_fit_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            transfer: TransferConfig::default(),
            propensity_penalty: default_propensity_penalty(),
            clip: ClipBounds::default(),
            variance: VarianceMethod::Sandwich,
            cross_fit: false,
            cross_fit_seed: 0,
        }
    }
}

/// An outcome model produced by either method.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedOutcome<F> {
    Transfer(Box<TransferResult<F>>),
    TargetOnly(ModelFit<F>),
}

impl<F: Scalar> FittedOutcome<F> {
    pub fn method(&self) -> OutcomeMethod {
        match self {
            FittedOutcome::Transfer(_) => OutcomeMethod::Transfer,
            FittedOutcome::TargetOnly(_) => OutcomeMethod::TargetOnly,
        }
    }

    pub fn beta(&self) -> &Array1<F> {
        match self {
            FittedOutcome::Transfer(t) => &t.beta_agg,
            FittedOutcome::TargetOnly(f) => &f.beta,
        }
    }
}

impl<F: Scalar> OutcomeModel<F> for FittedOutcome<F> {
    fn predict(&self, x: ndarray::ArrayView1<F>) -> F {
        match self {
            FittedOutcome::Transfer(t) => t.predict(x),
            FittedOutcome::TargetOnly(f) => f.predict_one(x),
        }
    }
}

/// Fits `μ̂_{k,m}` by the requested method. Target-only uses every row of
/// the stratum.
pub fn fit_outcome<F: Scalar>(
    data: &ObservationTable<F>,
    key: StratumKey,
    method: OutcomeMethod,
    cfg: &TransferConfig,
) -> Result<FittedOutcome<F>> {
    match method {
        OutcomeMethod::Transfer => Ok(FittedOutcome::Transfer(Box::new(transfer_fit(data, key, cfg)?))),
        OutcomeMethod::TargetOnly => {
            let rows = data.stratum_rows(key);
            let (x, y) = data.design(&rows);
            Ok(FittedOutcome::TargetOnly(fit_target_only(x.view(), y.view(), cfg)?))
        }
    }
}

/// Fits `μ̂_{k,m}` for every listed region, in parallel.
pub fn fit_outcomes<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    regions: &[usize],
    method: OutcomeMethod,
    cfg: &TransferConfig,
) -> Result<BTreeMap<usize, FittedOutcome<F>>> {
    let fits: Vec<(usize, Result<FittedOutcome<F>>)> = regions
        .par_iter()
        .map(|&m| (m, fit_outcome(data, StratumKey::new(k, m), method, cfg)))
        .collect();
    let mut out = BTreeMap::new();
    for (m, f) in fits {
        out.insert(m, f?);
    }
    Ok(out)
}

/// One requested effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectRequest {
    pub kind: EffectKind,
    pub m1: usize,
    pub m2: usize,
}

/// All ordered pairs `m1 ≠ m2` over `1..=n_regions`, `m1` outer.
pub fn ordered_pairs(n_regions: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for m1 in 1..=n_regions {
        for m2 in 1..=n_regions {
            if m1 != m2 {
                out.push((m1, m2));
            }
        }
    }
    out
}

/// Fits the region model for group `k` and the outcome models the requests
/// need, then evaluates every request.
pub fn estimate_effects<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    requests: &[EffectRequest],
    method: OutcomeMethod,
    cfg: &PipelineConfig,
) -> Result<Vec<TattEstimate<F>>> {
    let prop = estimate_propensity(data, k, &cfg.propensity_penalty, cfg.clip)?;
    estimate_effects_with(data, k, requests, method, &prop, cfg)
}

/// As [`estimate_effects`] with a given region model.
pub fn estimate_effects_with<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    requests: &[EffectRequest],
    method: OutcomeMethod,
    prop: &PropensityModel<F>,
    cfg: &PipelineConfig,
) -> Result<Vec<TattEstimate<F>>> {
    estimate_effects_each(data, k, requests, method, prop, cfg).into_iter().collect()
}

/// As [`estimate_effects_with`], but a failed outcome fit or estimate only
/// fails the requests that depend on it.
pub fn estimate_effects_each<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    requests: &[EffectRequest],
    method: OutcomeMethod,
    prop: &PropensityModel<F>,
    cfg: &PipelineConfig,
) -> Vec<Result<TattEstimate<F>>> {
    let mut regions: Vec<usize> = requests.iter().filter(|r| r.m1 != r.m2).map(|r| r.m1).collect();
    regions.sort_unstable();
    regions.dedup();

    if cfg.cross_fit {
        let fitted = cross_fit_outcomes(data, k, &regions, method, cfg);
        return requests
            .par_iter()
            .map(|r| {
                let comps = if r.m1 == r.m2 {
                    dr_components(data, k, r.m1, r.m2, &NoModel, prop)?
                } else {
                    let cf = fitted[&r.m1].as_ref().map_err(Clone::clone)?;
                    cross_fit_components(data, k, r.m1, r.m2, cf, prop)?
                };
                estimate_from_components(r.kind, (k, r.m1, r.m2), &comps, method, cfg.variance)
            })
            .collect();
    }

    let outcomes: BTreeMap<usize, Result<FittedOutcome<F>>> = regions
        .par_iter()
        .map(|&m| (m, fit_outcome(data, StratumKey::new(k, m), method, &cfg.transfer)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    requests
        .par_iter()
        .map(|r| {
            let mu: &dyn OutcomeModel<F> = match outcomes.get(&r.m1) {
                Some(f) => f.as_ref().map_err(Clone::clone)?,
                None => &NoModel,
            };
            let comps = dr_components(data, k, r.m1, r.m2, mu, prop)?;
            estimate_from_components(r.kind, (k, r.m1, r.m2), &comps, method, cfg.variance)
        })
        .collect()
}

/// Placeholder for same-region requests, where no model is evaluated.
struct NoModel;

impl<F: Scalar> OutcomeModel<F> for NoModel {
    fn predict(&self, _x: ndarray::ArrayView1<F>) -> F {
        F::nan()
    }
}

struct CrossFitted<F> {
    /// Rows of `(k, m1)` in fold 0 and fold 1.
    folds: [Vec<usize>; 2],
    /// Model `f` was fit without the rows of fold `f`.
    models: [FittedOutcome<F>; 2],
}

fn cross_fit_outcomes<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    regions: &[usize],
    method: OutcomeMethod,
    cfg: &PipelineConfig,
) -> BTreeMap<usize, Result<CrossFitted<F>>> {
    let jobs: Vec<(usize, Result<CrossFitted<F>>)> = regions
        .par_iter()
        .map(|&m| {
            let res = (|| {
                let key = StratumKey::new(k, m);
                let mut rows = data.stratum_rows(key);
                if rows.len() < 4 {
                    return Err(Error::Input(format!(
                        "cross-fitting stratum (k={k}, m={m}) needs at least 4 rows, has {}",
                        rows.len()
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.cross_fit_seed);
                rng.set_stream(m as u64);
                rows.shuffle(&mut rng);
                let half = rows.len() / 2;
                let mut f0 = rows[..half].to_vec();
                let mut f1 = rows[half..].to_vec();
                f0.sort_unstable();
                f1.sort_unstable();
                let fit_without = |fold: &[usize]| {
                    let keep: Vec<usize> = (0..data.n()).filter(|i| fold.binary_search(i).is_err()).collect();
                    fit_outcome(&data.select(&keep), key, method, &cfg.transfer)
                };
                let m0 = fit_without(&f0)?;
                let m1 = fit_without(&f1)?;
                Ok(CrossFitted {
                    folds: [f0, f1],
                    models: [m0, m1],
                })
            })();
            (m, res)
        })
        .collect();
    jobs.into_iter().collect()
}

fn cross_fit_components<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    m1: usize,
    m2: usize,
    cf: &CrossFitted<F>,
    prop: &PropensityModel<F>,
) -> Result<DrComponents<F>> {
    let x = data.x();
    let y = data.y();
    let target = data.stratum_rows(StratumKey::new(k, m2));
    if target.is_empty() {
        return Err(Error::Input(format!("stratum (k={k}, m={m2}) has no rows")));
    }
    let half = F::lit(0.5);
    let mu_target = Array1::from_iter(
        target
            .iter()
            .map(|&i| half * (cf.models[0].predict(x.row(i)) + cf.models[1].predict(x.row(i)))),
    );
    let y_target = Array1::from_iter(target.iter().map(|&i| y[i]));
    let mut mu_c = Vec::new();
    let mut y_c = Vec::new();
    let mut w = Vec::new();
    for (fold, model) in cf.folds.iter().zip(&cf.models) {
        for &i in fold {
            mu_c.push(model.predict(x.row(i)));
            y_c.push(y[i]);
            w.push(prop.ratio(x.row(i), m1, m2));
        }
    }
    DrComponents::from_predictions(
        mu_target,
        y_target,
        Array1::from(mu_c).view(),
        Array1::from(y_c).view(),
        Array1::from(w).view(),
    )
}

/// Estimates from one leave-one-center-out run.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRun<F> {
    /// `None` for the all-centers reference run.
    pub excluded_center: Option<String>,
    pub estimates: Vec<TattEstimate<F>>,
}

/// Re-runs the pipeline once per center of `target_region` with that
/// center's rows removed, estimating `E[Y(m1) | R=k, T=target_region]` for
/// every region `m1` in which group `k` is observed. The reference run on all
/// rows comes first.
///
/// `centers` restricts the runs to the listed centers; each must belong to
/// `target_region`.
pub fn leave_one_out_sensitivity<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    target_region: usize,
    centers: Option<&[String]>,
    method: OutcomeMethod,
    cfg: &PipelineConfig,
) -> Result<Vec<SensitivityRun<F>>> {
    if data.centers().is_none() {
        return Err(Error::Input("sensitivity analysis needs a center_id column".into()));
    }
    let in_region = data.centers_in_region(target_region);
    if in_region.len() < 2 {
        return Err(Error::Input(format!(
            "region {target_region} has {} center(s); leave-one-out needs at least 2",
            in_region.len()
        )));
    }
    let selected: Vec<String> = match centers {
        None => in_region.clone(),
        Some(list) => {
            for c in list {
                if in_region.binary_search(c).is_err() {
                    return Err(Error::UnknownCenter(format!("center '{c}' has no rows in region {target_region}")));
                }
            }
            list.to_vec()
        }
    };

    let requests: Vec<EffectRequest> = (1..=data.n_regions())
        .filter(|&m| data.count(StratumKey::new(k, m)) > 0)
        .map(|m1| EffectRequest {
            kind: EffectKind::Mpo,
            m1,
            m2: target_region,
        })
        .collect();

    let mut jobs: Vec<Option<String>> = vec![None];
    jobs.extend(selected.into_iter().map(Some));
    jobs.par_iter()
        .map(|c| {
            let table = match c {
                None => data.clone(),
                Some(c) => data.without_center(c)?,
            };
            let reqs: Vec<EffectRequest> = requests
                .iter()
                .copied()
                .filter(|r| table.count(StratumKey::new(k, r.m1)) > 0)
                .collect();
            Ok(SensitivityRun {
                excluded_center: c.clone(),
                estimates: estimate_effects(&table, k, &reqs, method, cfg)?,
            })
        })
        .collect()
}
