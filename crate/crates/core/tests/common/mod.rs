//! Independent reference implementations shared by integration tests.
//!
//! Nothing here calls into the solver code paths under test: objectives are
//! re-derived term by term and minimized with a derivative-free simplex search.

#![allow(dead_code)]

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tatt_core::glm::LambdaGrid;
use tatt_core::transfer::TransferConfig;
use tatt_core::Table;

/// Nelder–Mead with adaptive coefficients, restarted from the incumbent until
/// a restart no longer improves the objective.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], scale: f64) -> Vec<f64> {
    let mut best = x0.to_vec();
    let mut fbest = f(&best);
    let mut scale = scale;
    for _round in 0..60 {
        let (x, fx) = nm_once(f, &best, scale, 40_000);
        let improved = fbest - fx;
        if fx <= fbest {
            best = x;
            fbest = fx;
        }
        if improved.abs() < 1e-15 && scale < 1e-4 {
            break;
        }
        scale = (scale * 0.5).max(1e-6);
    }
    best
}

fn nm_once(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], scale: f64, max_eval: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    while evals < max_eval {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = values[n] - values[0];
        let size = simplex
            .iter()
            .skip(1)
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= 1e-16 * values[0].abs().max(1e-300) && size < 1e-11 {
            break;
        }
        if size < 1e-13 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / nf)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect()
        };
        let xr = along(-alpha);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(-alpha * gamma);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-alpha * rho);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(rho);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    for j in 0..n {
                        simplex[i][j] = simplex[0][j] + sigma * (simplex[i][j] - simplex[0][j]);
                    }
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let i = (0..=n)
        .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap())
        .unwrap();
    (simplex[i].clone(), values[i])
}

fn log1pexp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Penalty on the non-intercept entries: `λ‖b‖₂` or `λ‖b‖₂²`.
pub fn penalty_value(block: &[f64], lambda: f64, squared: bool) -> f64 {
    let sq: f64 = block.iter().map(|v| v * v).sum();
    if squared {
        lambda * sq
    } else {
        lambda * sq.sqrt()
    }
}

/// `(1/n) Σ [log(1+e^θ) − yθ] + penalty`, `b = (intercept, slopes)`.
pub fn binary_objective(
    b: &[f64],
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    lambda: f64,
    squared: bool,
) -> f64 {
    let n = x.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let mut t = b[0];
        for j in 0..x.ncols() {
            t += x[[i, j]] * b[j + 1];
        }
        if let Some(o) = offset {
            t += o[i];
        }
        total += log1pexp(t) - y[i] * t;
    }
    total / n as f64 + penalty_value(&b[1..], lambda, squared)
}

/// Multinomial objective; `b` is row-major `(p+1) × (M−1)` with intercepts in
/// the first row, category 1 the reference.
pub fn multinomial_objective(
    b: &[f64],
    x: &Array2<f64>,
    labels: &[usize],
    m: usize,
    lambda: f64,
    squared: bool,
) -> f64 {
    let n = x.nrows();
    let p = x.ncols();
    let free = m - 1;
    let mut total = 0.0;
    for i in 0..n {
        let mut scores = vec![0.0; m];
        for c in 0..free {
            let mut s = b[c];
            for j in 0..p {
                s += x[[i, j]] * b[(j + 1) * free + c];
            }
            scores[c + 1] = s;
        }
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + scores.iter().map(|s| (s - mx).exp()).sum::<f64>().ln();
        total += lse - scores[labels[i] - 1];
    }
    total / n as f64 + penalty_value(&b[free..], lambda, squared)
}

pub fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Random binary-outcome instance with both classes present.
pub fn random_binary_instance(seed: u64, n: usize, p: usize) -> (Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.5..1.5));
        let coef: Vec<f64> = (0..=p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = Array1::from_shape_fn(n, |i| {
            let mut t = coef[0];
            for j in 0..p {
                t += coef[j + 1] * x[[i, j]];
            }
            if rng.random::<f64>() < expit(t) {
                1.0
            } else {
                0.0
            }
        });
        let s = y.sum();
        if s >= 2.0 && s <= n as f64 - 2.0 {
            return (x, y);
        }
    }
}

/// Random multinomial instance with every category present.
pub fn random_multinomial_instance(seed: u64, n: usize, p: usize, m: usize) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.5..1.5));
        let coef = Array2::from_shape_fn((p + 1, m), |_| rng.random_range(-0.8..0.8));
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                let scores: Vec<f64> = (0..m)
                    .map(|c| coef[[0, c]] + (0..p).map(|j| coef[[j + 1, c]] * x[[i, j]]).sum::<f64>())
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                let u: f64 = rng.random::<f64>() * z;
                let mut acc = 0.0;
                for (c, s) in scores.iter().enumerate() {
                    acc += s.exp();
                    if u < acc {
                        return c + 1;
                    }
                }
                m
            })
            .collect();
        if (1..=m).all(|c| labels.iter().filter(|&&l| l == c).count() >= 2) {
            return (x, labels);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Confounded one-group, three-region design with two standard-normal
/// covariates. Region choice follows a multinomial logit in `alpha`
/// (`(p+1) × 2`, region 1 the reference); outcomes follow a logistic model
/// with region-specific coefficients `beta[m-1]` (intercept first).
pub struct DrScenario {
    pub data: Table,
    pub alpha: Array2<f64>,
    pub beta: Vec<Array1<f64>>,
}

pub fn dr_alpha() -> Array2<f64> {
    ndarray::array![[0.2, -0.1], [1.0, -0.8], [-0.5, 0.9]]
}

pub fn dr_beta() -> Vec<Array1<f64>> {
    vec![
        ndarray::array![-0.3, 1.2, 0.8],
        ndarray::array![0.1, 0.9, -0.6],
        ndarray::array![0.4, -0.5, 1.0],
    ]
}

fn linear(coef: ndarray::ArrayView1<f64>, x: &[f64]) -> f64 {
    coef[0] + x.iter().enumerate().map(|(j, v)| coef[j + 1] * v).sum::<f64>()
}

/// Region probabilities for one covariate row.
pub fn dr_region_probs(alpha: &Array2<f64>, x: &[f64]) -> [f64; 3] {
    let s2 = linear(alpha.column(0), x).exp();
    let s3 = linear(alpha.column(1), x).exp();
    let z = 1.0 + s2 + s3;
    [1.0 / z, s2 / z, s3 / z]
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

pub fn dr_scenario(seed: u64, n: usize) -> DrScenario {
    let alpha = dr_alpha();
    let beta = dr_beta();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 2));
    let mut t = Vec::with_capacity(n);
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let xi = [std_normal(&mut rng), std_normal(&mut rng)];
        x[[i, 0]] = xi[0];
        x[[i, 1]] = xi[1];
        let p = dr_region_probs(&alpha, &xi);
        let u: f64 = rng.random();
        let m = if u < p[0] {
            1
        } else if u < p[0] + p[1] {
            2
        } else {
            3
        };
        t.push(m);
        let mu = expit(linear(beta[m - 1].view(), &xi));
        y[i] = if rng.random::<f64>() < mu { 1.0 } else { 0.0 };
    }
    let data = Table::new(y, t, vec![1; n], x, None, 3, 1).unwrap();
    DrScenario { data, alpha, beta }
}

/// Monte Carlo value of `E[μ_{m1}(X) − μ_{m2}(X) | T = m2]` by
/// self-normalized weighting with `P(T = m2 | X)`, with its delta-method
/// standard error.
pub fn dr_truth(m1: usize, m2: usize, draws: usize, seed: u64) -> (f64, f64) {
    let alpha = dr_alpha();
    let beta = dr_beta();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sw, mut swd, mut sw2, mut sw2d, mut sw2d2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let xi = [std_normal(&mut rng), std_normal(&mut rng)];
        let w = dr_region_probs(&alpha, &xi)[m2 - 1];
        let d = expit(linear(beta[m1 - 1].view(), &xi)) - expit(linear(beta[m2 - 1].view(), &xi));
        sw += w;
        swd += w * d;
        sw2 += w * w;
        sw2d += w * w * d;
        sw2d2 += w * w * d * d;
    }
    let tau = swd / sw;
    // Σ w²(d − τ)² / (Σ w)²
    let var = (sw2d2 - 2.0 * tau * sw2d + tau * tau * sw2) / (sw * sw);
    (tau, var.sqrt())
}

/// One region, `sizes[k-1]` rows for group `k`, outcome coefficients
/// `betas[k-1]` (intercept first).
pub fn strata_table(seed: u64, sizes: &[usize], betas: &[Vec<f64>]) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = betas[0].len() - 1;
    let n: usize = sizes.iter().sum();
    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    let mut r = Vec::with_capacity(n);
    let mut i = 0;
    for (g, &nk) in sizes.iter().enumerate() {
        for _ in 0..nk {
            let mut t = betas[g][0];
            for j in 0..p {
                let v: f64 = rng.random_range(-1.5..1.5);
                x[[i, j]] = v;
                t += betas[g][j + 1] * v;
            }
            y[i] = if rng.random::<f64>() < expit(t) { 1.0 } else { 0.0 };
            r.push(g + 1);
            i += 1;
        }
    }
    Table::new(y, vec![1; n], r, x, None, 1, sizes.len()).unwrap()
}

pub fn val_loglik(beta: &Array1<f64>, x: &Array2<f64>, y: &Array1<f64>) -> f64 {
    (0..y.len())
        .map(|i| {
            let t = beta[0] + x.row(i).dot(&beta.slice(s![1..]));
            y[i] * t - (1.0 + t.exp()).ln()
        })
        .sum()
}

/// Target and one faithful source share coefficients; a second source has
/// every sign flipped and its shift is held near zero by a large λ_δ.
pub fn adversarial_instance() -> (Table, TransferConfig) {
    let good = vec![0.2, 1.0, -0.8, 0.6];
    let bad: Vec<f64> = good.iter().map(|v| -v).collect();
    let data = strata_table(2024, &[150, 800, 800], &[good.clone(), good, bad]);
    let cfg = TransferConfig {
        delta_lambda_grid: Some(LambdaGrid::explicit(&[1.0])),
        ..Default::default()
    };
    (data, cfg)
}
