//! The three commands: simulate, estimate, sensitivity.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tatt_core::causal::{
    estimate_effects_each, estimate_propensity, leave_one_out_sensitivity, EffectKind, EffectRequest, TattEstimate,
};
use tatt_core::sim::{compute_metrics, run_replicates};
use tatt_core::StratumKey;

use crate::config::{Label, Mode, Seeds, StudyConfig};
use crate::error::{CliError, Result};
use crate::report::{self, EstimateRecord};
use crate::table_io::{load_table, LoadedTable};

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub rows: usize,
    pub covariates: Vec<String>,
    pub regions: Vec<String>,
    pub groups: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

/// Run record written to `manifest.json`. Its `config` entry, passed back
/// through `--config manifest.json`, reproduces every other output file.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub mode: Mode,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub threads: usize,
    pub input: Option<InputRecord>,
    pub outputs: Vec<OutputRecord>,
    /// Failed replicates (simulate) or failed estimate requests.
    pub flagged_failures: usize,
    pub timings_ms: BTreeMap<String, u128>,
    pub config: StudyConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

impl RunOutcome {
    /// 0 when everything requested was computed, 3 when some requests were
    /// flagged as failed.
    pub fn exit_code(&self) -> i32 {
        if self.manifest.flagged_failures == 0 {
            0
        } else {
            3
        }
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn records(&self) -> Result<Vec<OutputRecord>> {
        self.files
            .iter()
            .map(|f| {
                Ok(OutputRecord {
                    file: f.clone(),
                    sha256: report::sha256_file(&self.dir.join(f))?,
                })
            })
            .collect()
    }
}

fn ms(t: Instant) -> u128 {
    t.elapsed().as_millis()
}

/// Runs `cfg` (already resolved for its mode) on a pool of `cfg.threads`
/// workers and writes every output plus the manifest.
pub fn execute(cfg: StudyConfig) -> Result<RunOutcome> {
    let mode = cfg.mode.ok_or_else(|| CliError::Config("no mode selected".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let mut cfg = cfg;
    if let Some(input) = &mut cfg.input {
        // the manifest must point at the input from any working directory
        if let Ok(abs) = std::fs::canonicalize(&input.path) {
            input.path = abs;
        }
    }
    let dir = cfg.output_dir();
    let mut out = Outputs {
        dir: dir.clone(),
        files: Vec::new(),
    };
    let start = Instant::now();
    let mut timings = BTreeMap::new();
    let (input, flagged) = pool.install(|| match mode {
        Mode::Simulate => simulate(&cfg, &mut out, &mut timings).map(|f| (None, f)),
        Mode::Estimate => estimate(&cfg, &mut out, &mut timings).map(|(i, f)| (Some(i), f)),
        Mode::Sensitivity => sensitivity(&cfg, &mut out, &mut timings).map(|(i, f)| (Some(i), f)),
    })?;
    timings.insert("total".to_string(), ms(start));
    let config_json = serde_json::to_vec(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = Manifest {
        tool: "tatt",
        version: env!("CARGO_PKG_VERSION"),
        mode,
        config_sha256: report::sha256_hex(&config_json),
        seeds: cfg.seeds(),
        threads,
        input,
        outputs: out.records()?,
        flagged_failures: flagged,
        timings_ms: timings,
        config: cfg,
    };
    report::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunOutcome {
        output_dir: dir,
        manifest,
    })
}

fn simulate(cfg: &StudyConfig, out: &mut Outputs, timings: &mut BTreeMap<String, u128>) -> Result<usize> {
    let t = Instant::now();
    let run = run_replicates(&cfg.dgp, &cfg.study, &cfg.pipeline())?;
    timings.insert("replicates".to_string(), ms(t));
    let metrics = compute_metrics(&run.rows);
    report::write_metrics(&out.path("metrics.csv"), &metrics)?;
    report::write_replicates(&out.path("replicates.csv"), &run.rows)?;
    if let Some(truth) = &run.truth {
        report::write_truth(&out.path("truth.csv"), truth)?;
    }
    Ok(run.failed_replicates)
}

fn load_input(cfg: &StudyConfig) -> Result<(LoadedTable, InputRecord)> {
    let input = cfg.input.as_ref().ok_or_else(|| CliError::Config("missing [input] section".into()))?;
    let loaded = load_table(&input.path, &input.columns)?;
    let record = InputRecord {
        path: input.path.clone(),
        sha256: report::sha256_file(&input.path)?,
        rows: loaded.table.n(),
        covariates: loaded.covariate_names.clone(),
        regions: loaded.region_labels.clone(),
        groups: loaded.group_labels.clone(),
    };
    Ok((loaded, record))
}

fn group_of(data: &LoadedTable, l: &Label) -> Result<usize> {
    data.group_index(l)
        .ok_or_else(|| CliError::Config(format!("group `{l}` does not occur in the input")))
}

fn region_of(data: &LoadedTable, l: &Label) -> Result<usize> {
    data.region_index(l)
        .ok_or_else(|| CliError::Config(format!("region `{l}` does not occur in the input")))
}

fn record(data: &LoadedTable, k: usize, req: &EffectRequest, method: &'static str, res: Result<TattEstimate<f64>>) -> EstimateRecord {
    let (estimate, failure) = match res {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    EstimateRecord {
        kind: req.kind.as_str(),
        group: data.group_label(k).to_string(),
        m1: data.region_label(req.m1).to_string(),
        m2: data.region_label(req.m2).to_string(),
        method,
        n_target: data.table.count(StratumKey::new(k, req.m2)),
        estimate,
        failure,
    }
}

/// Requests for group `k`. Without an explicit target list, only regions
/// where the group is observed are used as target or counterfactual.
fn requests_for(cfg: &StudyConfig, data: &LoadedTable, k: usize) -> Result<Vec<EffectRequest>> {
    let t = &data.table;
    let observed: Vec<usize> = (1..=t.n_regions()).filter(|&m| t.count(StratumKey::new(k, m)) > 0).collect();
    let targets: Vec<usize> = if cfg.estimate.target_regions.is_empty() {
        observed.clone()
    } else {
        cfg.estimate.target_regions.iter().map(|l| region_of(data, l)).collect::<Result<_>>()?
    };
    let mut out = Vec::new();
    for &kind in &cfg.estimate.kinds {
        for &m2 in &targets {
            for &m1 in &observed {
                if kind == EffectKind::Tatt && m1 == m2 {
                    continue;
                }
                out.push(EffectRequest { kind, m1, m2 });
            }
        }
    }
    Ok(out)
}

fn estimate(cfg: &StudyConfig, out: &mut Outputs, timings: &mut BTreeMap<String, u128>) -> Result<(InputRecord, usize)> {
    let t0 = Instant::now();
    let (data, input) = load_input(cfg)?;
    timings.insert("load".to_string(), ms(t0));
    let groups: Vec<usize> = if cfg.estimate.groups.is_empty() {
        (1..=data.table.n_groups()).collect()
    } else {
        cfg.estimate.groups.iter().map(|l| group_of(&data, l)).collect::<Result<_>>()?
    };
    let pipeline = cfg.pipeline();
    let t1 = Instant::now();
    let mut records = Vec::new();
    for &k in &groups {
        let requests = requests_for(cfg, &data, k)?;
        let prop = estimate_propensity(&data.table, k, &pipeline.propensity_penalty, pipeline.clip);
        for &method in &cfg.estimate.methods {
            let results: Vec<Result<TattEstimate<f64>>> = match &prop {
                Ok(p) => estimate_effects_each(&data.table, k, &requests, method, p, &pipeline)
                    .into_iter()
                    .map(|r| r.map_err(CliError::from))
                    .collect(),
                Err(e) => requests.iter().map(|_| Err(CliError::from(e.clone()))).collect(),
            };
            for (req, res) in requests.iter().zip(results) {
                records.push(record(&data, k, req, method.as_str(), res));
            }
        }
    }
    timings.insert("estimate".to_string(), ms(t1));
    let flagged = records.iter().filter(|r| r.estimate.is_none()).count();
    report::write_estimates(&out.path("estimates.csv"), &records)?;
    let forest: Vec<(String, &EstimateRecord)> = records.iter().map(|r| (report::forest_label(r, None), r)).collect();
    report::write_forest(&out.path(&report::forest_file_name(&data.outcome)), &forest)?;
    Ok((input, flagged))
}

fn sensitivity(cfg: &StudyConfig, out: &mut Outputs, timings: &mut BTreeMap<String, u128>) -> Result<(InputRecord, usize)> {
    let t0 = Instant::now();
    let (data, input) = load_input(cfg)?;
    timings.insert("load".to_string(), ms(t0));
    let s = &cfg.sensitivity;
    let k = group_of(&data, s.group.as_ref().expect("validated"))?;
    let target = region_of(&data, s.target_region.as_ref().expect("validated"))?;
    let t1 = Instant::now();
    let runs = leave_one_out_sensitivity(&data.table, k, target, s.centers.as_deref(), s.method, &cfg.pipeline())?;
    timings.insert("sensitivity".to_string(), ms(t1));
    let labelled: Vec<(String, Vec<EstimateRecord>)> = runs
        .into_iter()
        .map(|run| {
            let name = run.excluded_center.clone().unwrap_or_else(|| "all".to_string());
            let recs = run
                .estimates
                .into_iter()
                .map(|e| {
                    let req = EffectRequest {
                        kind: e.kind,
                        m1: e.m1,
                        m2: e.m2,
                    };
                    record(&data, k, &req, s.method.as_str(), Ok(e))
                })
                .collect();
            (name, recs)
        })
        .collect();
    report::write_sensitivity(&out.path("sensitivity.csv"), &labelled)?;
    report::write_estimates(&out.path("estimates.csv"), &labelled[0].1)?;
    let mut forest = Vec::new();
    for (name, recs) in &labelled {
        let prefix = if name == "all" { "all centers".to_string() } else { format!("without {name}") };
        for r in recs {
            forest.push((report::forest_label(r, Some(&prefix)), r));
        }
    }
    report::write_forest(&out.path(&report::forest_file_name(&data.outcome)), &forest)?;
    Ok((input, 0))
}

/// Loads `config` (or defaults), applies overrides, and runs `mode`.
pub fn run_command(
    mode: Mode,
    config: Option<&Path>,
    seed: Option<u64>,
    threads: Option<usize>,
    output_dir: Option<PathBuf>,
) -> Result<RunOutcome> {
    let cfg = match config {
        Some(p) => StudyConfig::load(p)?,
        None => StudyConfig::default(),
    };
    execute(cfg.resolve(mode, seed, threads, output_dir)?)
}
