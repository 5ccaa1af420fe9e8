use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::glm::{fit_penalized_multinomial, MultinomialFit, PenaltySpec};
use crate::scalar::Scalar;

/// Bounds applied to every predicted region probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipBounds {
    pub low: f64,
    pub high: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self { low: 0.01, high: 0.99 }
    }
}

impl ClipBounds {
    pub fn validate(&self, n_regions: usize) -> Result<()> {
        let m = n_regions as f64;
        if !(self.low > 0.0 && self.low < self.high && self.high < 1.0) {
            return Err(Error::Config(format!(
                "clip bounds need 0 < low < high < 1, got ({}, {})",
                self.low, self.high
            )));
        }
        if m * self.low > 1.0 || m * self.high < 1.0 {
            return Err(Error::Config(format!(
                "clip bounds ({}, {}) infeasible for {} regions",
                self.low, self.high, n_regions
            )));
        }
        Ok(())
    }
}

/// Replaces `p` by `clamp(s·pᵢ, low, high)` with the single scale `s` that
/// makes the result sum to 1. The sum is nondecreasing in `s`, so `s` is
/// found exactly between consecutive breakpoints `low/pᵢ`, `high/pᵢ`.
/// Requires `M·low ≤ 1 ≤ M·high` (see [`ClipBounds::validate`]).
pub fn clip_and_renormalize<F: Scalar>(p: &mut Array1<F>, clip: ClipBounds) {
    let lo = F::lit(clip.low);
    let hi = F::lit(clip.high);
    let clamped_sum = |s: F| -> F { p.iter().map(|&v| (v * s).max(lo).min(hi)).sum() };
    let mut breaks: Vec<F> = p
        .iter()
        .filter(|&&v| v > F::zero())
        .flat_map(|&v| [lo / v, hi / v])
        .collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let Some(j) = breaks.iter().position(|&b| clamped_sum(b) >= F::one()) else {
        // unreachable for valid bounds; fall back to the largest scale
        let s = breaks.last().copied().unwrap_or(F::one());
        p.mapv_inplace(|v| (v * s).max(lo).min(hi));
        return;
    };
    let upper = breaks[j];
    let lower = if j == 0 { F::zero() } else { breaks[j - 1] };
    // entries strictly inside the bounds on (lower, upper] scale freely
    let mid = if j == 0 { upper } else { (lower + upper) / F::lit(2.0) };
    let (mut fixed, mut free) = (F::zero(), F::zero());
    for &v in p.iter() {
        let t = v * mid;
        if t <= lo {
            fixed += lo;
        } else if t >= hi {
            fixed += hi;
        } else {
            free += v;
        }
    }
    let s = if free > F::zero() { ((F::one() - fixed) / free).min(upper) } else { upper };
    p.mapv_inplace(|v| {
        let t = v * mid;
        if t <= lo {
            lo
        } else if t >= hi {
            hi
        } else {
            v * s
        }
    });
}

/// `P(T = m | X, R = k)` for one group, with clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel<F> {
    pub k: usize,
    pub fit: MultinomialFit<F>,
    pub clip: ClipBounds,
}

impl<F: Scalar> PropensityModel<F> {
    pub fn new(k: usize, fit: MultinomialFit<F>, clip: ClipBounds) -> Result<Self> {
        clip.validate(fit.n_categories)?;
        Ok(Self { k, fit, clip })
    }

    /// Model with fixed coefficients `(p+1) × (M−1)`, region 1 the reference.
    pub fn from_coefficients(k: usize, coef: Array2<F>, clip: ClipBounds) -> Result<Self> {
        Self::new(k, MultinomialFit::from_coefficients(coef), clip)
    }

    pub fn n_regions(&self) -> usize {
        self.fit.n_categories
    }

    /// Probabilities before clipping; they sum to 1.
    pub fn raw_probabilities(&self, x: ArrayView1<F>) -> Array1<F> {
        self.fit.predict_one(x)
    }

    /// Clipped, renormalized probabilities over regions `1..=M`.
    pub fn probabilities(&self, x: ArrayView1<F>) -> Array1<F> {
        let mut p = self.fit.predict_one(x);
        clip_and_renormalize(&mut p, self.clip);
        p
    }

    pub fn probability_matrix(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut out = Array2::zeros((x.nrows(), self.n_regions()));
        for (i, row) in x.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.probabilities(row));
        }
        out
    }

    /// `P(m2 | x) / P(m1 | x)` after clipping.
    pub fn ratio(&self, x: ArrayView1<F>, m1: usize, m2: usize) -> F {
        let p = self.probabilities(x);
        p[m2 - 1] / p[m1 - 1]
    }
}

/// Fits the region model on all rows of group `k`.
pub fn estimate_propensity<F: Scalar>(
    data: &ObservationTable<F>,
    k: usize,
    penalty: &PenaltySpec,
    clip: ClipBounds,
) -> Result<PropensityModel<F>> {
    if k == 0 || k > data.n_groups() {
        return Err(Error::Input(format!("group {k} outside 1..={}", data.n_groups())));
    }
    clip.validate(data.n_regions())?;
    let rows = data.group_rows(k);
    let labels: Vec<usize> = rows.iter().map(|&i| data.regions()[i]).collect();
    let mut present = labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Unidentifiable(format!(
            "group {k} is observed in {} region(s); regional contrasts are not identified",
            present.len()
        )));
    }
    let (x, _) = data.design(&rows);
    let fit = fit_penalized_multinomial(x.view(), &labels, data.n_regions(), penalty)?;
    PropensityModel::new(k, fit, clip)
}

/// Default penalty for the region model.
pub fn default_propensity_penalty() -> PenaltySpec {
    PenaltySpec::squared_l2(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clip_pins_small_entries_and_renormalizes() {
        let mut p = array![0.001f64, 0.499, 0.5];
        clip_and_renormalize(&mut p, ClipBounds::default());
        assert_eq!(p[0], 0.01);
        assert!((p.sum() - 1.0).abs() < 1e-15);
        assert!((p[1] / p[2] - 0.499 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn clip_cascades() {
        let mut p = array![0.0f64, 0.0, 0.0105, 0.9895];
        let clip = ClipBounds { low: 0.01, high: 0.99 };
        clip_and_renormalize(&mut p, clip);
        assert!(p.iter().all(|&v| v >= 0.01 - 1e-15 && v <= 0.99 + 1e-15), "{p}");
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_entry_gives_way_to_floors() {
        let mut p = array![7e-9f64, 7e-9, 1.0 - 1.4e-8];
        clip_and_renormalize(&mut p, ClipBounds::default());
        assert_eq!(p[0], 0.01);
        assert_eq!(p[1], 0.01);
        assert!((p[2] - 0.98).abs() < 1e-15);
    }

    #[test]
    fn inside_bounds_untouched() {
        let mut p = array![0.2f64, 0.3, 0.5];
        let before = p.clone();
        clip_and_renormalize(&mut p, ClipBounds::default());
        assert_eq!(p, before);
    }

    #[test]
    fn infeasible_bounds_rejected() {
        assert!(ClipBounds { low: 0.3, high: 0.9 }.validate(4).is_err());
        assert!(ClipBounds { low: 0.01, high: 0.2 }.validate(4).is_err());
        assert!(ClipBounds::default().validate(5).is_ok());
    }

    #[test]
    fn intercept_only_equal_split_is_uniform() {
        let n = 40;
        let x = Array2::<f64>::zeros((n, 1));
        let t: Vec<usize> = (0..n).map(|i| i % 4 + 1).collect();
        let y = Array1::from_iter((0..n).map(|i| (i % 2) as f64));
        let data = ObservationTable::new(y, t, vec![1; n], x, None, 4, 1).unwrap();
        let prop = estimate_propensity(&data, 1, &default_propensity_penalty(), ClipBounds::default()).unwrap();
        for v in prop.probabilities(array![0.0].view()) {
            assert!((v - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn single_region_group_unidentified() {
        let x = Array2::<f64>::zeros((6, 1));
        let data = ObservationTable::new(array![0., 1., 0., 1., 0., 1.], vec![2; 6], vec![1; 6], x, None, 3, 1).unwrap();
        let err = estimate_propensity(&data, 1, &default_propensity_penalty(), ClipBounds::default()).unwrap_err();
        assert!(matches!(err, Error::Unidentifiable(_)));
    }
}
