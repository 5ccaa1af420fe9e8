//! Observation table: one row per individual with outcome, region, group,
//! covariates and an optional center identifier.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A (group, region) stratum. Both labels are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StratumKey {
    pub k: usize,
    pub m: usize,
}

impl StratumKey {
    pub fn new(k: usize, m: usize) -> Self {
        Self { k, m }
    }
}

/// Validated rows of `(y, t, r, x, center)`.
///
/// Regions `t` take values in `1..=n_regions` and groups `r` in
/// `1..=n_groups`. Outcomes are binary and stored as `0`/`1` scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable<F> {
    y: Array1<F>,
    t: Vec<usize>,
    r: Vec<usize>,
    x: Array2<F>,
    center: Option<Vec<String>>,
    n_regions: usize,
    n_groups: usize,
}

impl<F: Scalar> ObservationTable<F> {
    pub fn new(
        y: Array1<F>,
        t: Vec<usize>,
        r: Vec<usize>,
        x: Array2<F>,
        center: Option<Vec<String>>,
        n_regions: usize,
        n_groups: usize,
    ) -> Result<Self> {
        let n = y.len();
        if t.len() != n || r.len() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows, t {} , r {}, x {}",
                t.len(),
                r.len(),
                x.nrows()
            )));
        }
        if let Some(c) = &center {
            if c.len() != n {
                return Err(Error::Dimension(format!(
                    "center_id has {} rows, expected {n}",
                    c.len()
                )));
            }
        }
        if n_regions == 0 || n_groups == 0 {
            return Err(Error::Input("need at least one region and one group".into()));
        }
        for (i, &yi) in y.iter().enumerate() {
            if yi != F::zero() && yi != F::one() {
                return Err(Error::Input(format!("row {i}: outcome {yi} is not 0/1")));
            }
        }
        if let Some(i) = t.iter().position(|&m| m == 0 || m > n_regions) {
            return Err(Error::Input(format!(
                "row {i}: region {} outside 1..={n_regions}",
                t[i]
            )));
        }
        if let Some(i) = r.iter().position(|&k| k == 0 || k > n_groups) {
            return Err(Error::Input(format!(
                "row {i}: group {} outside 1..={n_groups}",
                r[i]
            )));
        }
        if let Some((i, _)) = x.rows().into_iter().enumerate().find(|(_, row)| row.iter().any(|v| !v.is_finite())) {
            return Err(Error::Input(format!("row {i}: non-finite covariate")));
        }
        Ok(Self {
            y,
            t,
            r,
            x,
            center,
            n_regions,
            n_groups,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of covariates (excluding the intercept).
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn y(&self) -> &Array1<F> {
        &self.y
    }

    pub fn regions(&self) -> &[usize] {
        &self.t
    }

    pub fn groups(&self) -> &[usize] {
        &self.r
    }

    pub fn x(&self) -> &Array2<F> {
        &self.x
    }

    pub fn centers(&self) -> Option<&[String]> {
        self.center.as_deref()
    }

    /// `n_{k,m}`.
    pub fn count(&self, key: StratumKey) -> usize {
        self.t
            .iter()
            .zip(&self.r)
            .filter(|&(&m, &k)| m == key.m && k == key.k)
            .count()
    }

    /// Row indices of a stratum, in table order.
    pub fn stratum_rows(&self, key: StratumKey) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.t[i] == key.m && self.r[i] == key.k)
            .collect()
    }

    /// Row indices of a group, in table order.
    pub fn group_rows(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.r[i] == k).collect()
    }

    /// Covariate rows and outcomes for the given indices.
    pub fn design(&self, rows: &[usize]) -> (Array2<F>, Array1<F>) {
        (self.x.select(Axis(0), rows), self.y.select(Axis(0), rows))
    }

    /// Sub-table with the given rows, preserving order and label ranges.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            y: self.y.select(Axis(0), rows),
            t: rows.iter().map(|&i| self.t[i]).collect(),
            r: rows.iter().map(|&i| self.r[i]).collect(),
            x: self.x.select(Axis(0), rows),
            center: self
                .center
                .as_ref()
                .map(|c| rows.iter().map(|&i| c[i].clone()).collect()),
            n_regions: self.n_regions,
            n_groups: self.n_groups,
        }
    }

    /// Table without the rows of `center`.
    pub fn without_center(&self, center: &str) -> Result<Self> {
        let ids = self
            .center
            .as_ref()
            .ok_or_else(|| Error::Input("table carries no center_id column".into()))?;
        let keep: Vec<usize> = (0..self.n()).filter(|&i| ids[i] != center).collect();
        Ok(self.select(&keep))
    }

    /// Distinct centers with at least one row in region `m`, sorted.
    pub fn centers_in_region(&self, m: usize) -> Vec<String> {
        let mut out: Vec<String> = match &self.center {
            Some(ids) => (0..self.n())
                .filter(|&i| self.t[i] == m)
                .map(|i| ids[i].clone())
                .collect(),
            None => Vec::new(),
        };
        out.sort();
        out.dedup();
        out
    }

    /// Mean outcome of a stratum, `None` when empty.
    pub fn stratum_mean(&self, key: StratumKey) -> Option<F> {
        let rows = self.stratum_rows(key);
        if rows.is_empty() {
            return None;
        }
        let s: F = rows.iter().map(|&i| self.y[i]).sum();
        Some(s / F::from_usize_lossy(rows.len()))
    }
}
