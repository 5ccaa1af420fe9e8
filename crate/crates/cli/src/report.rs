//! Output files: CSV tables, forest-plot data and the run manifest. Every
//! file is written to a temporary sibling and renamed into place.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tatt_core::causal::TattEstimate;
use tatt_core::sim::{MetricsRow, ReplicateRow, TrueEffects};

use crate::error::{CliError, Result};

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e))?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Shortest round-trip decimal form; never locale dependent.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

pub const METRICS_COLUMNS: [&str; 10] =
    ["pair", "m1", "m2", "method", "bias", "bias_x100", "rmse", "coverage", "n_reps", "n_failed"];

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}-{}", r.m1, r.m2),
                r.m1.to_string(),
                r.m2.to_string(),
                r.method.as_str().to_string(),
                num(r.bias),
                num(r.bias_x100),
                num(r.rmse),
                num(r.coverage),
                r.n_reps.to_string(),
                r.n_failed.to_string(),
            ]
        })
        .collect();
    write_csv(path, &header(&METRICS_COLUMNS), &body)
}

pub const REPLICATE_COLUMNS: [&str; 10] =
    ["replicate", "m1", "m2", "method", "estimate", "se", "lo", "hi", "truth", "failure"];

pub fn write_replicates(path: &Path, rows: &[ReplicateRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.replicate.to_string(),
                r.m1.to_string(),
                r.m2.to_string(),
                r.method.as_str().to_string(),
                num(r.estimate),
                num(r.se),
                num(r.lower),
                num(r.upper),
                num(r.truth),
                r.failure.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(path, &header(&REPLICATE_COLUMNS), &body)
}

pub fn write_truth(path: &Path, truth: &TrueEffects) -> Result<()> {
    let m = truth.tau.nrows();
    let mut body = Vec::new();
    for m1 in 1..=m {
        for m2 in 1..=m {
            body.push(vec![
                truth.k.to_string(),
                m1.to_string(),
                m2.to_string(),
                num(truth.get(m1, m2)),
                num(truth.mc_se[[m1 - 1, m2 - 1]]),
                num(truth.mpo[[m1 - 1, m2 - 1]]),
                truth.oracle_n.to_string(),
            ]);
        }
    }
    write_csv(path, &header(&["k", "m1", "m2", "tau", "mc_se", "mpo", "oracle_n"]), &body)
}

/// One estimate or failed request, with input labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub kind: &'static str,
    pub group: String,
    pub m1: String,
    pub m2: String,
    pub method: &'static str,
    pub n_target: usize,
    pub estimate: Option<TattEstimate<f64>>,
    pub failure: Option<String>,
}

pub const ESTIMATE_COLUMNS: [&str; 16] = [
    "kind",
    "k",
    "m1",
    "m2",
    "point",
    "se",
    "lo",
    "hi",
    "method",
    "n_target",
    "n_counterfactual",
    "raw_point",
    "sandwich_se",
    "bootstrap_se",
    "plug_in",
    "status",
];

fn estimate_fields(r: &EstimateRecord) -> Vec<String> {
    let nan = num(f64::NAN);
    match &r.estimate {
        Some(e) => vec![
            r.kind.to_string(),
            r.group.clone(),
            r.m1.clone(),
            r.m2.clone(),
            num(e.point),
            num(e.se),
            num(e.ci.0),
            num(e.ci.1),
            r.method.to_string(),
            e.n_target.to_string(),
            e.n_counterfactual.to_string(),
            num(e.raw_point),
            num(e.sandwich_se),
            e.bootstrap_se.map(num).unwrap_or_default(),
            e.plug_in.to_string(),
            "ok".to_string(),
        ],
        None => vec![
            r.kind.to_string(),
            r.group.clone(),
            r.m1.clone(),
            r.m2.clone(),
            nan.clone(),
            nan.clone(),
            nan.clone(),
            nan.clone(),
            r.method.to_string(),
            r.n_target.to_string(),
            String::new(),
            nan.clone(),
            nan,
            String::new(),
            String::new(),
            format!("failed: {}", r.failure.as_deref().unwrap_or("")),
        ],
    }
}

pub fn write_estimates(path: &Path, rows: &[EstimateRecord]) -> Result<()> {
    let body: Vec<Vec<String>> = rows.iter().map(estimate_fields).collect();
    write_csv(path, &header(&ESTIMATE_COLUMNS), &body)
}

/// Estimates grouped by the left-out center; the reference run is `all`.
pub fn write_sensitivity(path: &Path, runs: &[(String, Vec<EstimateRecord>)]) -> Result<()> {
    let mut cols = vec!["excluded_center"];
    cols.extend(ESTIMATE_COLUMNS);
    let mut body = Vec::new();
    for (center, rows) in runs {
        for r in rows {
            let mut line = vec![center.clone()];
            line.extend(estimate_fields(r));
            body.push(line);
        }
    }
    write_csv(path, &header(&cols), &body)
}

pub fn forest_label(r: &EstimateRecord, prefix: Option<&str>) -> String {
    let base = match r.kind {
        "TATT" => format!("group {}: region {} vs {} among region {} ({})", r.group, r.m1, r.m2, r.m2, r.method),
        _ => format!("group {}: Y(region {}) among region {} ({})", r.group, r.m1, r.m2, r.method),
    };
    match prefix {
        Some(p) => format!("{p} | {base}"),
        None => base,
    }
}

/// `label,point,lower,upper`, successful estimates only.
pub fn write_forest(path: &Path, rows: &[(String, &EstimateRecord)]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .filter_map(|(label, r)| {
            r.estimate
                .as_ref()
                .map(|e| vec![label.clone(), num(e.point), num(e.ci.0), num(e.ci.1)])
        })
        .collect();
    write_csv(path, &header(&["label", "point", "lower", "upper"]), &body)
}

/// File-name-safe form of an outcome column name.
pub fn forest_file_name(outcome: &str) -> String {
    let safe: String = outcome
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("forest_{safe}.csv")
}
