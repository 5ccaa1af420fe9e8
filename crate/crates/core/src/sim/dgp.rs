use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};

/// Simulation design. Groups and regions are 1-based in the generated
/// table; vectors here are indexed from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n_groups: usize,
    pub n_regions: usize,
    pub n: usize,
    pub proportions: Vec<f64>,
    pub p: usize,
    /// Number of nonzero entries of each coefficient perturbation.
    pub sparsity: usize,
    pub delta_magnitudes: Vec<f64>,
    pub alpha_range: (f64, f64),
    /// First and last entry of the shared outcome coefficients; the rest are
    /// equally spaced between them.
    pub beta_range: (f64, f64),
    /// Group `k` covariates have mean `group_mean_shifts[k-1]` in every coordinate.
    pub group_mean_shifts: Vec<f64>,
    /// Covariates are clamped to `[-bound, bound]`.
    pub bound: f64,
    pub coefficient_seed: u64,
    pub replicate_seed_base: u64,
    /// Draw fresh coefficients for every replicate instead of once per study.
    pub redraw_coefficients: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_groups: 4,
            n_regions: 5,
            n: 10_000,
            proportions: vec![0.05, 0.15, 0.20, 0.60],
            p: 20,
            sparsity: 5,
            delta_magnitudes: vec![0.1, 0.2],
            alpha_range: (-0.2, 0.2),
            beta_range: (0.6, -0.4),
            group_mean_shifts: vec![0.0, 0.1, 0.2, 0.3],
            bound: 2.0,
            coefficient_seed: 2024,
            replicate_seed_base: 7,
            redraw_coefficients: false,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.n_regions < 2 || self.p == 0 {
            return Err(Error::Config("need at least 1 group, 2 regions and 1 covariate".into()));
        }
        if self.proportions.len() != self.n_groups || self.group_mean_shifts.len() != self.n_groups {
            return Err(Error::Config(format!(
                "proportions and group_mean_shifts need {} entries",
                self.n_groups
            )));
        }
        let total: f64 = self.proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.proportions.iter().any(|&q| q < 0.0) {
            return Err(Error::Config(format!("proportions must be nonnegative and sum to 1, sum is {total}")));
        }
        if self.sparsity > self.p {
            return Err(Error::Config(format!("sparsity {} exceeds p = {}", self.sparsity, self.p)));
        }
        if self.sparsity > 0 && self.delta_magnitudes.is_empty() {
            return Err(Error::Config("delta_magnitudes is empty".into()));
        }
        if !(self.bound > 0.0) {
            return Err(Error::Config(format!("bound must be positive, got {}", self.bound)));
        }
        if !(self.alpha_range.0 <= self.alpha_range.1) {
            return Err(Error::Config("alpha_range is reversed".into()));
        }
        Ok(())
    }

    /// Group sizes by largest remainder, summing to `n`.
    pub fn group_sizes(&self) -> Vec<usize> {
        let raw: Vec<f64> = self.proportions.iter().map(|q| q * self.n as f64).collect();
        let mut sizes: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
        let mut rest = self.n - sizes.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
        for &i in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            sizes[i] += 1;
            rest -= 1;
        }
        sizes
    }

    /// The shared outcome coefficients.
    pub fn beta_base(&self) -> Array1<f64> {
        let (a, b) = self.beta_range;
        if self.p == 1 {
            return Array1::from_elem(1, a);
        }
        Array1::linspace(a, b, self.p)
    }

    pub fn group_mean(&self, k: usize) -> Array1<f64> {
        Array1::from_elem(self.p, self.group_mean_shifts[k - 1])
    }

    /// `Σ_{ij} = 2^{-|i-j|}`.
    pub fn covariance(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.p, self.p), |(i, j)| 0.5f64.powi((i as i32 - j as i32).abs()))
    }
}

/// Region and outcome coefficients for every stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// `alpha[k-1]` is `p × M`; column 0 (the reference region) is zero.
    pub alpha: Vec<Array2<f64>>,
    /// `beta[k-1][m-1]`, length `p`.
    pub beta: Vec<Vec<Array1<f64>>>,
    pub delta: Vec<Vec<Array1<f64>>>,
}

/// A sparse perturbation: `s` positions without replacement, each with a
/// magnitude drawn from `magnitudes` and a fair random sign.
pub fn draw_delta<R: Rng>(p: usize, s: usize, magnitudes: &[f64], rng: &mut R) -> Array1<f64> {
    let mut d = Array1::zeros(p);
    if s == 0 {
        return d;
    }
    for j in sample(rng, p, s).into_iter() {
        let mag = magnitudes[rng.random_range(0..magnitudes.len())];
        d[j] = if rng.random_bool(0.5) { mag } else { -mag };
    }
    d
}

pub fn draw_coefficients<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<Coefficients> {
    cfg.validate()?;
    let base = cfg.beta_base();
    let (lo, hi) = cfg.alpha_range;
    let mut alpha = Vec::with_capacity(cfg.n_groups);
    let mut beta = Vec::with_capacity(cfg.n_groups);
    let mut delta = Vec::with_capacity(cfg.n_groups);
    for _k in 0..cfg.n_groups {
        let mut a = Array2::zeros((cfg.p, cfg.n_regions));
        for m in 1..cfg.n_regions {
            for j in 0..cfg.p {
                a[[j, m]] = if lo < hi { rng.random_range(lo..hi) } else { lo };
            }
        }
        alpha.push(a);
        let mut bk = Vec::with_capacity(cfg.n_regions);
        let mut dk = Vec::with_capacity(cfg.n_regions);
        for _m in 0..cfg.n_regions {
            let d = draw_delta(cfg.p, cfg.sparsity, &cfg.delta_magnitudes, rng);
            bk.push(&base + &d);
            dk.push(d);
        }
        beta.push(bk);
        delta.push(dk);
    }
    Ok(Coefficients { alpha, beta, delta })
}

/// Coefficients for the study, from `coefficient_seed` (stream 0) or, when
/// redrawn per replicate, from stream `r + 1`.
pub fn study_coefficients(cfg: &DgpConfig, replicate: Option<u64>) -> Result<Coefficients> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.coefficient_seed);
    if let Some(r) = replicate {
        rng.set_stream(r + 1);
    }
    draw_coefficients(cfg, &mut rng)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for q in 0..j {
                s -= l[[i, q]] * l[[j, q]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Computation("covariance is not positive definite".into()));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// `n` multivariate-normal rows `mean + L z`, before clamping.
pub fn sample_mvn<R: Rng>(n: usize, mean: ArrayView1<f64>, chol: ArrayView2<f64>, rng: &mut R) -> Array2<f64> {
    let p = mean.len();
    let mut out = Array2::zeros((n, p));
    let mut z = vec![0.0; p];
    for mut row in out.rows_mut() {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..p {
            let mut s = mean[i];
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                s += chol[[i, j]] * zj;
            }
            row[i] = s;
        }
    }
    out
}

pub fn draw_covariates<R: Rng>(
    n: usize,
    mean: ArrayView1<f64>,
    chol: ArrayView2<f64>,
    bound: f64,
    rng: &mut R,
) -> Array2<f64> {
    let mut x = sample_mvn(n, mean, chol, rng);
    x.mapv_inplace(|v| v.clamp(-bound, bound));
    x
}

/// `P(T = m | x)` for `m = 1..=M` under `alpha` (`p × M`, column 0 zero).
pub fn region_probabilities(x: ArrayView1<f64>, alpha: ArrayView2<f64>) -> Array1<f64> {
    let scores = x.dot(&alpha);
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = scores.mapv(|s| (s - max).exp());
    let z = e.sum();
    e / z
}

pub fn assign_regions<R: Rng>(x: ArrayView2<f64>, alpha: ArrayView2<f64>, rng: &mut R) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|row| {
            let p = region_probabilities(row, alpha);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (m, &pm) in p.iter().enumerate() {
                acc += pm;
                if u < acc {
                    return m + 1;
                }
            }
            p.len()
        })
        .collect()
}

pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli outcomes with success probability `expit(xᵀβ)`.
pub fn draw_outcomes<R: Rng>(x: ArrayView2<f64>, beta: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
    Array1::from_iter(x.rows().into_iter().map(|row| {
        let pr = expit(row.dot(&beta));
        if rng.random::<f64>() < pr {
            1.0
        } else {
            0.0
        }
    }))
}

/// One simulated dataset, rows ordered by group.
pub fn generate_dataset<R: Rng>(cfg: &DgpConfig, coef: &Coefficients, rng: &mut R) -> Result<ObservationTable<f64>> {
    cfg.validate()?;
    let chol = cholesky(cfg.covariance().view())?;
    let sizes = cfg.group_sizes();
    let mut x = Array2::zeros((cfg.n, cfg.p));
    let mut y = Array1::zeros(cfg.n);
    let mut t = Vec::with_capacity(cfg.n);
    let mut r = Vec::with_capacity(cfg.n);
    let mut start = 0;
    for (gi, &nk) in sizes.iter().enumerate() {
        let k = gi + 1;
        let xk = draw_covariates(nk, cfg.group_mean(k).view(), chol.view(), cfg.bound, rng);
        let tk = assign_regions(xk.view(), coef.alpha[gi].view(), rng);
        for (i, row) in xk.rows().into_iter().enumerate() {
            let m = tk[i];
            let pr = expit(row.dot(&coef.beta[gi][m - 1]));
            y[start + i] = if rng.random::<f64>() < pr { 1.0 } else { 0.0 };
        }
        x.slice_mut(ndarray::s![start..start + nk, ..]).assign(&xk);
        t.extend_from_slice(&tk);
        r.extend(std::iter::repeat_n(k, nk));
        start += nk;
    }
    ObservationTable::new(y, t, r, x, None, cfg.n_regions, cfg.n_groups)
}

/// Dataset for replicate `r`: stream `r` of `replicate_seed_base`.
pub fn replicate_dataset(cfg: &DgpConfig, coef: &Coefficients, replicate: u64) -> Result<ObservationTable<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.replicate_seed_base);
    rng.set_stream(replicate);
    generate_dataset(cfg, coef, &mut rng)
}

/// Monte Carlo truth for one group: `tau[[m1-1, m2-1]]` is
/// `E[Y(m1) − Y(m2) | R=k, T=m2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueEffects {
    pub k: usize,
    pub tau: Array2<f64>,
    pub mc_se: Array2<f64>,
    /// `E[Y(m1) | R=k, T=m2]`.
    pub mpo: Array2<f64>,
    pub oracle_n: usize,
}

impl TrueEffects {
    pub fn get(&self, m1: usize, m2: usize) -> f64 {
        self.tau[[m1 - 1, m2 - 1]]
    }
}

const ORACLE_CHUNK: usize = 100_000;

/// Draws `oracle_n` covariate vectors from group `k`, weights each by
/// `P(T=m2 | X)` and averages the outcome-probability contrasts, all pairs
/// in one pass. Chunks use independent streams of `seed` and are reduced in
/// order.
pub fn compute_true_tatt(cfg: &DgpConfig, coef: &Coefficients, k: usize, oracle_n: usize, seed: u64) -> Result<TrueEffects> {
    cfg.validate()?;
    if k == 0 || k > cfg.n_groups || oracle_n == 0 {
        return Err(Error::Config(format!("invalid oracle request: group {k}, {oracle_n} draws")));
    }
    let m = cfg.n_regions;
    let chol = cholesky(cfg.covariance().view())?;
    let mean = cfg.group_mean(k);
    let n_chunks = oracle_n.div_ceil(ORACLE_CHUNK);
    let alpha = coef.alpha[k - 1].view();
    let betas = &coef.beta[k - 1];

    // Per chunk: Σw[m2], Σw·e[m1,m2], Σw²[m2], Σw²·d[m1,m2], Σw²·d²[m1,m2]
    type Sums = (Array1<f64>, Array2<f64>, Array1<f64>, Array2<f64>, Array2<f64>);
    let chunks: Vec<Sums> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = ORACLE_CHUNK.min(oracle_n - c * ORACLE_CHUNK);
            let x = draw_covariates(len, mean.view(), chol.view(), cfg.bound, &mut rng);
            let mut sw = Array1::zeros(m);
            let mut swe = Array2::zeros((m, m));
            let mut sw2 = Array1::zeros(m);
            let mut sw2d = Array2::zeros((m, m));
            let mut sw2d2 = Array2::zeros((m, m));
            let mut e = vec![0.0; m];
            for row in x.rows() {
                let w = region_probabilities(row, alpha);
                for (mi, ei) in e.iter_mut().enumerate() {
                    *ei = expit(row.dot(&betas[mi]));
                }
                for m2 in 0..m {
                    let w2 = w[m2];
                    sw[m2] += w2;
                    sw2[m2] += w2 * w2;
                    for m1 in 0..m {
                        let d = e[m1] - e[m2];
                        swe[[m1, m2]] += w2 * e[m1];
                        sw2d[[m1, m2]] += w2 * w2 * d;
                        sw2d2[[m1, m2]] += w2 * w2 * d * d;
                    }
                }
            }
            (sw, swe, sw2, sw2d, sw2d2)
        })
        .collect();

    let mut sw = Array1::<f64>::zeros(m);
    let mut swe = Array2::<f64>::zeros((m, m));
    let mut sw2 = Array1::<f64>::zeros(m);
    let mut sw2d = Array2::<f64>::zeros((m, m));
    let mut sw2d2 = Array2::<f64>::zeros((m, m));
    for (a, b, c, d, e) in chunks {
        sw += &a;
        swe += &b;
        sw2 += &c;
        sw2d += &d;
        sw2d2 += &e;
    }
    let mut tau = Array2::zeros((m, m));
    let mut mc_se = Array2::zeros((m, m));
    let mut mpo = Array2::zeros((m, m));
    for m2 in 0..m {
        for m1 in 0..m {
            mpo[[m1, m2]] = swe[[m1, m2]] / sw[m2];
            if m1 == m2 {
                continue;
            }
            let t = (swe[[m1, m2]] - swe[[m2, m2]]) / sw[m2];
            tau[[m1, m2]] = t;
            // ratio-estimator variance: Σ w²(d − τ)² / (Σw)²
            let v = (sw2d2[[m1, m2]] - 2.0 * t * sw2d[[m1, m2]] + t * t * sw2[m2]).max(0.0);
            mc_se[[m1, m2]] = v.sqrt() / sw[m2];
        }
    }
    Ok(TrueEffects {
        k,
        tau,
        mc_se,
        mpo,
        oracle_n,
    })
}
