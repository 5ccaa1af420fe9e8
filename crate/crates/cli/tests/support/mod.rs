//! Synthetic registry-shaped CSV files for end-to-end tests.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const GROUPS: [&str; 3] = ["A", "B", "C"];
pub const REGIONS: usize = 4;
/// Numeric covariates besides `age`; with `age` and `sex` there are 32
/// covariate columns, and `sex` expands to one indicator.
pub const EXTRA: usize = 30;

/// Center holding rows of groups B and C only.
pub const NO_A_CENTER: &str = "r2-c3";

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Three groups by four regions with `per_stratum` rows each. Every region
/// has centers `r{m}-c1..c3`; in region 2, center c3 never holds group A.
/// Covariates drift with region and the outcome depends on them, so naive
/// regional contrasts are confounded.
pub fn registry_csv(seed: u64, per_stratum: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("outcome,region,group,center_id,age,sex");
    for j in 1..=EXTRA {
        write!(out, ",z{j}").unwrap();
    }
    out.push('\n');
    for (gi, g) in GROUPS.iter().enumerate() {
        for m in 1..=REGIONS {
            let shift = m as f64 - 2.5;
            for _ in 0..per_stratum {
                let n: f64 = rng.sample(StandardNormal);
                let age = 65.0 + 3.0 * shift + 9.0 * n;
                let male = rng.random_bool(0.55 + 0.05 * shift);
                let z: Vec<f64> = (0..EXTRA)
                    .map(|j| {
                        let e: f64 = rng.sample(StandardNormal);
                        e + if j < 4 { 0.25 * shift } else { 0.0 }
                    })
                    .collect();
                let eta = -1.9 + 0.3 * (gi as f64 - 1.0) + 0.15 * shift + 0.04 * (age - 65.0)
                    + if male { 0.3 } else { 0.0 }
                    + 0.4 * z[0]
                    - 0.3 * z[1];
                let y = u8::from(rng.random::<f64>() < expit(eta));
                let c = if m == 2 && gi == 0 { rng.random_range(1..=2) } else { rng.random_range(1..=3) };
                write!(out, "{y},{m},{g},r{m}-c{c},{age:.2},{}", if male { "M" } else { "F" }).unwrap();
                for v in &z {
                    write!(out, ",{v:.4}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_registry(path: &Path, seed: u64, per_stratum: usize) {
    std::fs::write(path, registry_csv(seed, per_stratum)).unwrap();
}

/// Study config for the registry file at `csv` (a path relative to the
/// config file or absolute); `extra` goes first, so it may hold top-level
/// keys as well as tables.
pub fn registry_config(csv: &str, extra: &str) -> String {
    format!(
        "{extra}\n[input]\npath = \"{csv}\"\n[input.columns]\ncategorical = [\"sex\"]\n"
    )
}

/// Parses a CSV file into its header and rows.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

pub fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}
