use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tatt_core::causal::*;
use tatt_core::sim::*;
use tatt_core::{Error, StratumKey};

fn small_dgp() -> DgpConfig {
    DgpConfig {
        n: 4000,
        p: 5,
        sparsity: 2,
        ..DgpConfig::default()
    }
}

fn quick_opts(n_replicates: usize) -> StudyOptions {
    StudyOptions {
        n_replicates,
        oracle_n: 200_000,
        ..StudyOptions::default()
    }
}

#[test]
fn delta_sign_and_magnitude_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (p, s) = (20, 5);
    let draws = 20_000;
    let mut positions = vec![0usize; p];
    let (mut positive, mut small, mut total) = (0usize, 0usize, 0usize);
    for _ in 0..draws {
        let d = draw_delta(p, s, &[0.1, 0.2], &mut rng);
        let nz: Vec<usize> = (0..p).filter(|&j| d[j] != 0.0).collect();
        assert_eq!(nz.len(), s);
        for j in nz {
            positions[j] += 1;
            total += 1;
            positive += (d[j] > 0.0) as usize;
            small += (d[j].abs() == 0.1) as usize;
            assert!(d[j].abs() == 0.1 || d[j].abs() == 0.2);
        }
    }
    assert_eq!(total, 100_000);
    let f = |c: usize| c as f64 / total as f64;
    assert!((f(positive) - 0.5).abs() < 0.005, "sign {}", f(positive));
    assert!((f(small) - 0.5).abs() < 0.005, "magnitude {}", f(small));
    // each position is hit with probability s/p
    for c in positions {
        assert!((c as f64 / draws as f64 - 0.25).abs() < 0.015);
    }
}

#[test]
fn covariate_law_and_clamp() {
    let cfg = DgpConfig::default();
    let sigma = cfg.covariance();
    assert_eq!(sigma[[0, 0]], 1.0);
    assert_eq!(sigma[[2, 5]], 0.125);
    let chol = cholesky(sigma.view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 1_000_000;
    let p = cfg.p;
    let zero = Array1::zeros(p);
    let x = sample_mvn(n, zero.view(), chol.view(), &mut rng);
    let mut cov = Array2::<f64>::zeros((p, p));
    let mean = x.sum_axis(ndarray::Axis(0)) / n as f64;
    for row in x.rows() {
        for i in 0..p {
            let a = row[i] - mean[i];
            for j in 0..=i {
                cov[[i, j]] += a * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..=i {
            let c = cov[[i, j]] / (n - 1) as f64;
            let target = 0.5f64.powi((i - j) as i32);
            assert!((c - target).abs() < 0.01, "cov[{i},{j}] = {c}");
        }
    }
    let clamped = draw_covariates(50_000, cfg.group_mean(4).view(), chol.view(), 2.0, &mut rng);
    assert!(clamped.iter().all(|v| (-2.0..=2.0).contains(v)));
    assert!(clamped.iter().any(|&v| v == 2.0));
}

#[test]
fn region_labels_follow_the_model() {
    let cfg = DgpConfig::default();
    let coef = study_coefficients(&cfg, None).unwrap();
    let alpha = coef.alpha[0].view();
    let zero_row = Array1::zeros(cfg.p);
    let p0 = region_probabilities(zero_row.view(), alpha);
    assert!(p0.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    let flat = Array2::zeros((cfg.p, cfg.n_regions));
    let x1 = Array1::from_elem(cfg.p, 1.3);
    assert!(region_probabilities(x1.view(), flat.view()).iter().all(|&v| (v - 0.2).abs() < 1e-15));

    let chol = cholesky(cfg.covariance().view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 1_000_000;
    let x = draw_covariates(n, cfg.group_mean(1).view(), chol.view(), cfg.bound, &mut rng);
    let labels = assign_regions(x.view(), alpha, &mut rng);
    let mut expected = Array1::<f64>::zeros(cfg.n_regions);
    for row in x.rows() {
        expected += &region_probabilities(row, alpha);
    }
    for m in 1..=cfg.n_regions {
        let freq = labels.iter().filter(|&&l| l == m).count() as f64 / n as f64;
        assert!((freq - expected[m - 1] / n as f64).abs() < 0.005, "region {m}");
    }
}

#[test]
fn outcomes_follow_the_model() {
    let cfg = DgpConfig::default();
    let chol = cholesky(cfg.covariance().view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 1_000_000;
    let x = draw_covariates(n, cfg.group_mean(2).view(), chol.view(), cfg.bound, &mut rng);
    let beta = cfg.beta_base();
    let y = draw_outcomes(x.view(), beta.view(), &mut rng);
    let analytic: f64 = x.rows().into_iter().map(|r| expit(r.dot(&beta))).sum::<f64>() / n as f64;
    assert!((y.mean().unwrap() - analytic).abs() < 0.002);

    let zero = Array1::zeros(cfg.p);
    assert_eq!(expit(x.row(0).dot(&zero)), 0.5);

    // x·β = 30 everywhere
    let xs = Array2::from_elem((n, 1), 1.0);
    let b = Array1::from_elem(1, 30.0);
    let ys = draw_outcomes(xs.view(), b.view(), &mut rng);
    assert!(ys.mean().unwrap() > 0.9999);
}

#[test]
fn oracle_agrees_with_an_independent_smaller_oracle() {
    let cfg = DgpConfig::default();
    let coef = study_coefficients(&cfg, None).unwrap();
    let big = compute_true_tatt(&cfg, &coef, 1, 10_000_000, 99).unwrap();
    let small = compute_true_tatt(&cfg, &coef, 1, 1_000_000, 31337).unwrap();
    for m1 in 1..=5 {
        assert_eq!(big.get(m1, m1), 0.0);
        for m2 in 1..=5 {
            if m1 == m2 {
                continue;
            }
            let (a, b) = (big.get(m1, m2), small.get(m1, m2));
            let se = (big.mc_se[[m1 - 1, m2 - 1]].powi(2) + small.mc_se[[m1 - 1, m2 - 1]].powi(2)).sqrt();
            assert!((a - b).abs() <= 3.0 * se, "({m1},{m2}): {a} vs {b}, se {se}");
            assert!(big.mc_se[[m1 - 1, m2 - 1]] < 2e-4);
            let mpo_gap = big.mpo[[m1 - 1, m2 - 1]] - big.mpo[[m2 - 1, m2 - 1]];
            assert!((mpo_gap - a).abs() < 1e-12);
        }
    }
}

/// The reported Monte Carlo standard error matches the spread of repeated
/// independent oracles.
#[test]
fn oracle_standard_error_is_calibrated() {
    let cfg = DgpConfig::default();
    let coef = study_coefficients(&cfg, None).unwrap();
    let reps = 40;
    let runs: Vec<TrueEffects> = (0..reps)
        .map(|s| compute_true_tatt(&cfg, &coef, 1, 50_000, 500 + s).unwrap())
        .collect();
    let mut ratios = Vec::new();
    for (m1, m2) in ordered_pairs(5) {
        let v: Vec<f64> = runs.iter().map(|t| t.get(m1, m2)).collect();
        let mean = v.iter().sum::<f64>() / reps as f64;
        let sd = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let se = runs.iter().map(|t| t.mc_se[[m1 - 1, m2 - 1]]).sum::<f64>() / reps as f64;
        ratios.push(sd / se);
    }
    let avg = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((0.85..1.15).contains(&avg), "{ratios:?}");
    assert!(ratios.iter().all(|r| (0.6..1.5).contains(r)), "{ratios:?}");
}

#[test]
fn identical_arms_have_zero_truth() {
    let cfg = DgpConfig::default();
    let mut coef = study_coefficients(&cfg, None).unwrap();
    coef.beta[0][2] = coef.beta[0][4].clone();
    let t = compute_true_tatt(&cfg, &coef, 1, 300_000, 5).unwrap();
    assert_eq!(t.get(3, 5), 0.0);
    assert_eq!(t.get(5, 3), 0.0);
}

#[test]
fn zero_sparsity_gives_shared_coefficients() {
    let cfg = DgpConfig {
        sparsity: 0,
        ..DgpConfig::default()
    };
    let coef = study_coefficients(&cfg, None).unwrap();
    let base = cfg.beta_base();
    assert!(coef.beta.iter().flatten().all(|b| *b == base));
    assert_eq!(base[0], 0.6);
    assert!((base[19] + 0.4).abs() < 1e-15);
    assert!((base[1] - base[0] + 1.0 / 19.0).abs() < 1e-15);
}

#[test]
fn one_replicate_gives_forty_rows_deterministically() {
    let dgp = small_dgp();
    let opts = quick_opts(1);
    let cfg = PipelineConfig::default();
    let a = run_replicates(&dgp, &opts, &cfg).unwrap();
    assert_eq!(a.rows.len(), 40);
    assert_eq!(a.failed_replicates, 0);
    let b = run_replicates(&dgp, &opts, &cfg).unwrap();
    assert_eq!(a.rows, b.rows);
    let metrics = compute_metrics(&a.rows);
    assert_eq!(metrics.len(), 40);
}

#[test]
fn replicates_are_schedule_invariant() {
    let dgp = small_dgp();
    let opts = quick_opts(3);
    let cfg = PipelineConfig::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_replicates(&dgp, &opts, &cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.rows, four.rows);
    // replicate 2 alone matches its slice of the full run
    let coef = study_coefficients(&dgp, None).unwrap();
    let d2 = replicate_dataset(&dgp, &coef, 2).unwrap();
    let again = replicate_dataset(&dgp, &coef, 2).unwrap();
    assert_eq!(d2, again);
    assert_ne!(d2, replicate_dataset(&dgp, &coef, 1).unwrap());
}

#[test]
fn replicate_rows_match_a_manual_pipeline() {
    let dgp = small_dgp();
    let opts = quick_opts(2);
    let cfg = PipelineConfig::default();
    let run = run_replicates(&dgp, &opts, &cfg).unwrap();
    let truth = run.truth.as_ref().unwrap();
    let coef = study_coefficients(&dgp, None).unwrap();
    let data = replicate_dataset(&dgp, &coef, 1).unwrap();
    let prop = estimate_propensity(&data, 1, &default_propensity_penalty(), ClipBounds::default()).unwrap();
    for method in [OutcomeMethod::Transfer, OutcomeMethod::TargetOnly] {
        let eo = EstimateOptions {
            variance: cfg.variance,
            method,
        };
        for (m1, m2) in ordered_pairs(5) {
            let mu = fit_outcome(&data, StratumKey::new(1, m1), method, &cfg.transfer).unwrap();
            let e = estimate_tatt(&data, 1, m1, m2, &mu, &prop, &eo).unwrap();
            let row = run
                .rows
                .iter()
                .find(|r| r.replicate == 1 && r.m1 == m1 && r.m2 == m2 && r.method == method)
                .unwrap();
            assert_eq!(row.estimate, e.point);
            assert_eq!(row.se, e.se);
            assert_eq!((row.lower, row.upper), e.ci);
            assert_eq!(row.truth, truth.get(m1, m2));
        }
    }
}

#[test]
fn coverage_sanity() {
    let dgp = small_dgp();
    let run = run_replicates(&dgp, &quick_opts(2), &PipelineConfig::default()).unwrap();
    let z = 1.959963984540054;
    let injected: Vec<ReplicateRow> = run
        .rows
        .iter()
        .map(|r| ReplicateRow {
            estimate: r.truth,
            lower: r.truth - z * r.se,
            upper: r.truth + z * r.se,
            ..r.clone()
        })
        .collect();
    assert!(compute_metrics(&injected).iter().all(|m| m.coverage == 1.0 && m.rmse == 0.0));
    let shifted: Vec<ReplicateRow> = injected
        .iter()
        .map(|r| ReplicateRow {
            estimate: r.estimate + 10.0 * r.se,
            lower: r.lower + 10.0 * r.se,
            upper: r.upper + 10.0 * r.se,
            ..r.clone()
        })
        .collect();
    assert!(compute_metrics(&shifted).iter().all(|m| m.coverage < 0.01));
}

#[test]
fn failure_budget() {
    // two group-1 rows cannot support a region model
    let dgp = DgpConfig {
        n: 40,
        p: 3,
        sparsity: 1,
        ..DgpConfig::default()
    };
    let strict = quick_opts(3);
    let e = run_replicates(&dgp, &strict, &PipelineConfig::default());
    assert!(matches!(e, Err(Error::Computation(_))));
    let lenient = StudyOptions {
        max_failure_rate: 1.0,
        ..strict
    };
    let run = run_replicates(&dgp, &lenient, &PipelineConfig::default()).unwrap();
    assert_eq!(run.failed_replicates, 3);
    assert!(run.rows.iter().all(|r| r.failure.is_some() && r.estimate.is_nan()));
    assert!(compute_metrics(&run.rows).iter().all(|m| m.is_missing() && m.n_failed == 3));
}

#[test]
fn redrawn_coefficients_carry_their_own_truth() {
    let dgp = DgpConfig {
        redraw_coefficients: true,
        ..small_dgp()
    };
    let run = run_replicates(&dgp, &quick_opts(2), &PipelineConfig::default()).unwrap();
    assert!(run.truth.is_none());
    let t0: Vec<f64> = run.rows.iter().filter(|r| r.replicate == 0).map(|r| r.truth).collect();
    let t1: Vec<f64> = run.rows.iter().filter(|r| r.replicate == 1).map(|r| r.truth).collect();
    assert_ne!(t0, t1);
    assert_ne!(study_coefficients(&dgp, Some(0)).unwrap(), study_coefficients(&dgp, Some(1)).unwrap());
}

proptest! {
    #[test]
    fn metrics_invariants(
        cells in proptest::collection::vec((-1.0f64..1.0, 0.0f64..0.5, -1.0f64..1.0), 1..40),
    ) {
        let rows: Vec<ReplicateRow> = cells
            .iter()
            .enumerate()
            .map(|(i, &(est, half, truth))| ReplicateRow {
                replicate: i as u64,
                m1: 1,
                m2: 2,
                method: OutcomeMethod::Transfer,
                estimate: est,
                se: half / 1.96,
                lower: est - half,
                upper: est + half,
                truth,
                failure: None,
            })
            .collect();
        let m = &compute_metrics(&rows)[0];
        prop_assert!(m.rmse + 1e-12 >= m.bias.abs());
        prop_assert!((0.0..=1.0).contains(&m.coverage));
        prop_assert_eq!(m.bias_x100, 100.0 * m.bias);
        prop_assert_eq!(m.n_reps, cells.len());
    }
}
