use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::propensity::PropensityModel;
use crate::data::{ObservationTable, StratumKey};
use crate::error::{Error, Result};
use crate::glm::ModelFit;
use crate::scalar::Scalar;
use crate::transfer::TransferResult;

/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.959963984540054;

/// Anything that predicts `E[Y | X = x]` in `[0, 1]`.
pub trait OutcomeModel<F: Scalar>: Sync {
    fn predict(&self, x: ArrayView1<F>) -> F;
}

impl<F: Scalar> OutcomeModel<F> for ModelFit<F> {
    fn predict(&self, x: ArrayView1<F>) -> F {
        self.predict_one(x)
    }
}

impl<F: Scalar> OutcomeModel<F> for TransferResult<F> {
    fn predict(&self, x: ArrayView1<F>) -> F {
        TransferResult::predict(self, x)
    }
}

/// Wraps a closure as an outcome model.
pub struct FnOutcome<G>(pub G);

impl<F: Scalar, G: Fn(ArrayView1<F>) -> F + Sync> OutcomeModel<F> for FnOutcome<G> {
    fn predict(&self, x: ArrayView1<F>) -> F {
        (self.0)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectKind {
    #[serde(alias = "TATT")]
    Tatt,
    #[serde(alias = "MPO")]
    Mpo,
}

impl EffectKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EffectKind::Tatt => "TATT",
            EffectKind::Mpo => "MPO",
        }
    }
}

/// How the outcome model was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeMethod {
    #[default]
    Transfer,
    TargetOnly,
}

impl OutcomeMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeMethod::Transfer => "transfer",
            OutcomeMethod::TargetOnly => "target-only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VarianceMethod {
    /// Influence-function variance with the nuisance models held fixed.
    #[default]
    Sandwich,
    /// Rows resampled with replacement within each stratum.
    Bootstrap { replicates: usize, seed: u64 },
}

impl VarianceMethod {
    pub fn bootstrap(seed: u64) -> Self {
        VarianceMethod::Bootstrap { replicates: 200, seed }
    }
}

/// Per-row pieces of the doubly-robust sum for one `(k, m1, m2)`.
///
/// Target rows are those in `(k, m2)`; counterfactual rows are those in
/// `(k, m1)`. For `m1 = m2` the counterfactual part is folded into the
/// target part (`μ̂ + (Y − μ̂) = Y`) and `counterfactual` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DrComponents<F> {
    /// `μ̂(Xᵢ)` on target rows.
    pub mu_target: Array1<F>,
    pub y_target: Array1<F>,
    /// `P(m2|Xᵢ)/P(m1|Xᵢ) · (Yᵢ − μ̂(Xᵢ))` on counterfactual rows.
    pub weighted_residual: Array1<F>,
    pub n_counterfactual: usize,
}

impl<F: Scalar> DrComponents<F> {
    /// Builds components from per-row predictions and weight ratios.
    pub fn from_predictions(
        mu_target: Array1<F>,
        y_target: Array1<F>,
        mu_counterfactual: ArrayView1<F>,
        y_counterfactual: ArrayView1<F>,
        ratio: ArrayView1<F>,
    ) -> Result<Self> {
        if mu_target.len() != y_target.len()
            || mu_counterfactual.len() != y_counterfactual.len()
            || ratio.len() != y_counterfactual.len()
        {
            return Err(Error::Dimension("component lengths disagree".into()));
        }
        let weighted_residual = Array1::from_iter(
            ratio
                .iter()
                .zip(y_counterfactual.iter().zip(mu_counterfactual.iter()))
                .map(|(&w, (&y, &mu))| w * (y - mu)),
        );
        Ok(Self {
            mu_target,
            y_target,
            n_counterfactual: weighted_residual.len(),
            weighted_residual,
        })
    }

    pub fn n_target(&self) -> usize {
        self.y_target.len()
    }

    pub fn target_mean(&self) -> F {
        self.y_target.iter().copied().sum::<F>() / F::from_usize_lossy(self.n_target())
    }

    /// The first bracketed average: the doubly-robust `E[Y(m1) | R=k, T=m2]`.
    pub fn mpo(&self) -> F {
        let a: F = self.mu_target.iter().copied().sum();
        let b: F = self.weighted_residual.iter().copied().sum();
        (a + b) / F::from_usize_lossy(self.n_target())
    }

    pub fn tatt(&self) -> F {
        self.mpo() - self.target_mean()
    }

    fn point(&self, kind: EffectKind) -> F {
        match kind {
            EffectKind::Tatt => self.tatt(),
            EffectKind::Mpo => self.mpo(),
        }
    }

    /// Target-row contributions: `μ̂ − Y` for the contrast, `μ̂` for the
    /// potential-outcome mean.
    fn target_contrib(&self, kind: EffectKind) -> Array1<F> {
        match kind {
            EffectKind::Tatt => &self.mu_target - &self.y_target,
            EffectKind::Mpo => self.mu_target.clone(),
        }
    }
}

fn centered_ss<F: Scalar>(v: &Array1<F>) -> F {
    if v.is_empty() {
        return F::zero();
    }
    let mean = v.iter().copied().sum::<F>() / F::from_usize_lossy(v.len());
    v.iter().map(|&a| (a - mean) * (a - mean)).sum()
}

/// Sandwich standard error with the nuisance models held fixed:
/// `se² = (1/n²)·[Σ_target (aᵢ − ā)² + Σ_counterfactual (bᵢ − b̄)²]`, each
/// stratum centered at its own mean.
pub fn sandwich_se<F: Scalar>(comps: &DrComponents<F>, kind: EffectKind) -> Result<F> {
    let n = comps.n_target();
    if n < 2 {
        return Err(Error::Input(format!("standard error needs at least 2 target rows, got {n}")));
    }
    let ss = centered_ss(&comps.target_contrib(kind)) + centered_ss(&comps.weighted_residual);
    Ok(ss.sqrt() / F::from_usize_lossy(n))
}

/// Bootstrap standard error: target and counterfactual rows are resampled
/// separately, replicate `b` drawing from stream `b` of the seeded generator.
pub fn bootstrap_se<F: Scalar>(comps: &DrComponents<F>, kind: EffectKind, replicates: usize, seed: u64) -> Result<F> {
    let n = comps.n_target();
    if n < 2 {
        return Err(Error::Input(format!("standard error needs at least 2 target rows, got {n}")));
    }
    if replicates < 2 {
        return Err(Error::Config(format!("bootstrap needs at least 2 replicates, got {replicates}")));
    }
    let a = comps.target_contrib(kind);
    let b = &comps.weighted_residual;
    let nf = F::from_usize_lossy(n);
    let stats: Vec<F> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let mut s = F::zero();
            for _ in 0..a.len() {
                s += a[rng.random_range(0..a.len())];
            }
            for _ in 0..b.len() {
                s += b[rng.random_range(0..b.len())];
            }
            s / nf
        })
        .collect();
    let mean = stats.iter().copied().sum::<F>() / F::from_usize_lossy(replicates);
    let ss: F = stats.iter().map(|&s| (s - mean) * (s - mean)).sum();
    Ok((ss / F::from_usize_lossy(replicates - 1)).sqrt())
}

/// One effect estimate with its interval and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TattEstimate<F> {
    pub kind: EffectKind,
    pub k: usize,
    pub m1: usize,
    pub m2: usize,
    /// Reported value; potential-outcome means are clamped to `[0, 1]`.
    pub point: F,
    /// Value before any clamping.
    pub raw_point: F,
    pub se: F,
    pub ci: (F, F),
    /// `n_{k,m2}`.
    pub n_target: usize,
    /// `n_{k,m1}`.
    pub n_counterfactual: usize,
    pub method: OutcomeMethod,
    pub variance: VarianceMethod,
    pub sandwich_se: F,
    pub bootstrap_se: Option<F>,
    /// No counterfactual rows: the residual correction is absent and the
    /// estimate is the plug-in outcome-model average.
    pub plug_in: bool,
}

impl<F: Scalar> TattEstimate<F> {
    pub fn covers(&self, truth: F) -> bool {
        self.ci.0 <= truth && truth <= self.ci.1
    }
}

/// Turns components into a finished estimate.
pub fn estimate_from_components<F: Scalar>(
    kind: EffectKind,
    key: (usize, usize, usize),
    comps: &DrComponents<F>,
    method: OutcomeMethod,
    variance: VarianceMethod,
) -> Result<TattEstimate<F>> {
    let (k, m1, m2) = key;
    let raw = comps.point(kind);
    let sandwich = sandwich_se(comps, kind)?;
    let boot = match variance {
        VarianceMethod::Sandwich => None,
        VarianceMethod::Bootstrap { replicates, seed } => Some(bootstrap_se(comps, kind, replicates, seed)?),
    };
    let se = boot.unwrap_or(sandwich);
    let half = F::lit(Z_95) * se;
    let (point, ci) = match kind {
        EffectKind::Tatt => (raw, (raw - half, raw + half)),
        EffectKind::Mpo => {
            let unit = |v: F| v.max(F::zero()).min(F::one());
            (unit(raw), (unit(raw - half), unit(raw + half)))
        }
    };
    Ok(TattEstimate {
        kind,
        k,
        m1,
        m2,
        point,
        raw_point: raw,
        se,
        ci,
        n_target: comps.n_target(),
        n_counterfactual: comps.n_counterfactual,
        method,
        variance,
        sandwich_se: sandwich,
        bootstrap_se: boot,
        plug_in: m1 != m2 && comps.n_counterfactual == 0,
    })
}

/// Evaluates the outcome and region models on the rows of `(k, m2)` and
/// `(k, m1)`.
pub fn dr_components<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    m1: usize,
    m2: usize,
    mu_hat: &dyn OutcomeModel<F>,
    prop: &PropensityModel<F>,
) -> Result<DrComponents<F>> {
    check_indices(data, k, m1, m2)?;
    if prop.k != k {
        return Err(Error::Input(format!("propensity model is for group {}, not {k}", prop.k)));
    }
    if prop.fit.p() != data.p() || prop.n_regions() != data.n_regions() {
        return Err(Error::Dimension(format!(
            "propensity model has {} covariates over {} regions; table has {} over {}",
            prop.fit.p(),
            prop.n_regions(),
            data.p(),
            data.n_regions()
        )));
    }
    let target = data.stratum_rows(StratumKey::new(k, m2));
    if target.is_empty() {
        return Err(Error::Input(format!("stratum (k={k}, m={m2}) has no rows")));
    }
    let x = data.x();
    let y = data.y();
    let y_target = Array1::from_iter(target.iter().map(|&i| y[i]));
    if m1 == m2 {
        return DrComponents::from_predictions(
            y_target.clone(),
            y_target,
            ArrayView1::from(&[]),
            ArrayView1::from(&[]),
            ArrayView1::from(&[]),
        );
    }
    let mu_target = Array1::from_iter(target.iter().map(|&i| mu_hat.predict(x.row(i))));
    let cf = data.stratum_rows(StratumKey::new(k, m1));
    let mu_cf = Array1::from_iter(cf.iter().map(|&i| mu_hat.predict(x.row(i))));
    let y_cf = Array1::from_iter(cf.iter().map(|&i| y[i]));
    let ratio = Array1::from_iter(cf.iter().map(|&i| prop.ratio(x.row(i), m1, m2)));
    DrComponents::from_predictions(mu_target, y_target, mu_cf.view(), y_cf.view(), ratio.view())
}

fn check_indices<F: Scalar>(data: &ObservationTable<F>, k: usize, m1: usize, m2: usize) -> Result<()> {
    if k == 0 || k > data.n_groups() {
        return Err(Error::Input(format!("group {k} outside 1..={}", data.n_groups())));
    }
    for m in [m1, m2] {
        if m == 0 || m > data.n_regions() {
            return Err(Error::Input(format!("region {m} outside 1..={}", data.n_regions())));
        }
    }
    Ok(())
}

/// Options shared by [`estimate_tatt`] and [`estimate_mpo`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimateOptions {
    pub variance: VarianceMethod,
    pub method: OutcomeMethod,
}

/// Doubly-robust estimate of `E[Y(m1) − Y(m2) | R=k, T=m2]`.
pub fn estimate_tatt<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    m1: usize,
    m2: usize,
    mu_hat: &dyn OutcomeModel<F>,
    prop: &PropensityModel<F>,
    opts: &EstimateOptions,
) -> Result<TattEstimate<F>> {
    let comps = dr_components(data, k, m1, m2, mu_hat, prop)?;
    estimate_from_components(
        EffectKind::Tatt,
        (k, m1, m2),
        &comps,
        opts.method,
        opts.variance,
    )
}

/// Doubly-robust estimate of `E[Y(m1) | R=k, T=m2]`, clamped to `[0, 1]`.
pub fn estimate_mpo<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    m1: usize,
    m2: usize,
    mu_hat: &dyn OutcomeModel<F>,
    prop: &PropensityModel<F>,
    opts: &EstimateOptions,
) -> Result<TattEstimate<F>> {
    let comps = dr_components(data, k, m1, m2, mu_hat, prop)?;
    estimate_from_components(
        EffectKind::Mpo,
        (k, m1, m2),
        &comps,
        opts.method,
        opts.variance,
    )
}
