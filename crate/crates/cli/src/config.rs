//! Study configuration file (TOML).
//!
//! Every field has a fixed default, so a run is fully determined by the file
//! plus command-line overrides. The resolved configuration, defaults
//! included, is recorded in the run manifest.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use tatt_core::causal::{ClipBounds, EffectKind, OutcomeMethod, PipelineConfig, VarianceMethod};
use tatt_core::glm::PenaltySpec;
use tatt_core::sim::{DgpConfig, StudyOptions};
use tatt_core::transfer::TransferConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Estimate,
    Sensitivity,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Estimate => "estimate",
            Mode::Sensitivity => "sensitivity",
        }
    }
}

/// A group or region label as written in the input file. Integers are
/// accepted in the config file and compared as text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub String);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Int(v) => Label(v.to_string()),
            Raw::Text(s) => Label(s),
        })
    }
}

/// Which CSV columns carry what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub outcome: String,
    pub region: String,
    pub group: String,
    /// Center identifier; a column literally named `center_id` is used when
    /// this is unset.
    pub center: Option<String>,
    /// Covariate columns; every remaining column when unset.
    pub covariates: Option<Vec<String>>,
    /// Covariates to one-hot encode, reference level first in lexical order.
    pub categorical: Vec<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            outcome: "outcome".into(),
            region: "region".into(),
            group: "group".into(),
            center: None,
            covariates: None,
            categorical: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Relative paths are taken from the config file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Groups to analyse; all groups when empty.
    pub groups: Vec<Label>,
    /// Regions whose populations the effects are averaged over; all when empty.
    pub target_regions: Vec<Label>,
    pub kinds: Vec<EffectKind>,
    pub methods: Vec<OutcomeMethod>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            groups: Vec::new(),
            target_regions: Vec::new(),
            kinds: vec![EffectKind::Tatt, EffectKind::Mpo],
            methods: vec![OutcomeMethod::Transfer],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub group: Option<Label>,
    pub target_region: Option<Label>,
    /// Centers to leave out; every center of the target region when unset.
    pub centers: Option<Vec<String>>,
    pub method: OutcomeMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Must agree with the subcommand when given.
    pub mode: Option<Mode>,
    /// Master seed. When set, every other seed is derived from it (see
    /// [`StudyConfig::apply_seed`]).
    pub seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    pub threads: usize,
    pub output_dir: Option<PathBuf>,
    pub dgp: DgpConfig,
    pub study: StudyOptions,
    pub input: Option<InputConfig>,
    pub estimate: EstimateConfig,
    pub sensitivity: SensitivityConfig,
    pub transfer: TransferConfig,
    pub propensity_penalty: PenaltySpec,
    pub clip: ClipBounds,
    pub variance: VarianceMethod,
    pub cross_fit: bool,
    pub cross_fit_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            mode: None,
            seed: None,
            threads: 0,
            output_dir: None,
            dgp: DgpConfig::default(),
            study: StudyOptions::default(),
            input: None,
            estimate: EstimateConfig::default(),
            sensitivity: SensitivityConfig::default(),
            transfer: p.transfer,
            propensity_penalty: p.propensity_penalty,
            clip: p.clip,
            variance: p.variance,
            cross_fit: p.cross_fit,
            cross_fit_seed: p.cross_fit_seed,
        }
    }
}

/// Every seed a run consumes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub coefficient_seed: u64,
    pub replicate_seed_base: u64,
    pub oracle_seed: u64,
    pub split_seed: u64,
    pub fold_seed: u64,
    pub cross_fit_seed: u64,
    pub bootstrap_seed: Option<u64>,
}

impl StudyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a TOML config, or the `config` entry of a run manifest when the
    /// file ends in `.json`. Relative input paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let inner = v
                .get("config")
                .ok_or_else(|| CliError::Config(format!("{}: manifest has no `config` entry", path.display())))?;
            serde_json::from_value(inner.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            Self::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(input) = &mut cfg.input {
            if input.path.is_relative() {
                if let Some(dir) = path.parent() {
                    input.path = dir.join(&input.path);
                }
            }
        }
        Ok(cfg)
    }

    /// Derives every seed from `seed`: coefficient `s`, replicate base
    /// `s+1`, oracle `s+2`, split `s+3`, folds `s+4`, cross-fit `s+5`,
    /// bootstrap `s+6`.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.dgp.coefficient_seed = seed;
        self.dgp.replicate_seed_base = seed.wrapping_add(1);
        self.study.oracle_seed = seed.wrapping_add(2);
        self.transfer.split_seed = seed.wrapping_add(3);
        self.transfer.cv.fold_seed = seed.wrapping_add(4);
        self.cross_fit_seed = seed.wrapping_add(5);
        if let VarianceMethod::Bootstrap { seed: s, .. } = &mut self.variance {
            *s = seed.wrapping_add(6);
        }
    }

    /// Applies command-line overrides and checks the result for `mode`.
    pub fn resolve(mut self, mode: Mode, seed: Option<u64>, threads: Option<usize>, output_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(CliError::Config(format!(
                    "config file is for `{}` but `{}` was requested",
                    m.as_str(),
                    mode.as_str()
                )));
            }
        }
        self.mode = Some(mode);
        if let Some(s) = seed.or(self.seed) {
            self.apply_seed(s);
        }
        if let Some(t) = threads {
            self.threads = t;
        }
        if output_dir.is_some() {
            self.output_dir = output_dir;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.transfer.validate()?;
        self.propensity_penalty.validate()?;
        if let VarianceMethod::Bootstrap { replicates, .. } = self.variance {
            if replicates < 2 {
                return Err(CliError::Config(format!("bootstrap needs at least 2 replicates, got {replicates}")));
            }
        }
        match self.mode {
            Some(Mode::Simulate) => {
                self.dgp.validate()?;
                if self.study.methods.is_empty() {
                    return Err(CliError::Config("study.methods is empty".into()));
                }
            }
            Some(Mode::Estimate) => {
                if self.input.is_none() {
                    return Err(CliError::Config("estimate needs an [input] section".into()));
                }
                if self.estimate.kinds.is_empty() || self.estimate.methods.is_empty() {
                    return Err(CliError::Config("estimate.kinds and estimate.methods must be non-empty".into()));
                }
            }
            Some(Mode::Sensitivity) => {
                if self.input.is_none() {
                    return Err(CliError::Config("sensitivity needs an [input] section".into()));
                }
                if self.sensitivity.group.is_none() || self.sensitivity.target_region.is_none() {
                    return Err(CliError::Config(
                        "sensitivity needs sensitivity.group and sensitivity.target_region".into(),
                    ));
                }
            }
            None => {}
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            transfer: self.transfer.clone(),
            propensity_penalty: self.propensity_penalty,
            clip: self.clip,
            variance: self.variance,
            cross_fit: self.cross_fit,
            cross_fit_seed: self.cross_fit_seed,
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            coefficient_seed: self.dgp.coefficient_seed,
            replicate_seed_base: self.dgp.replicate_seed_base,
            oracle_seed: self.study.oracle_seed,
            split_seed: self.transfer.split_seed,
            fold_seed: self.transfer.cv.fold_seed,
            cross_fit_seed: self.cross_fit_seed,
            bootstrap_seed: match self.variance {
                VarianceMethod::Bootstrap { seed, .. } => Some(seed),
                VarianceMethod::Sandwich => None,
            },
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("tatt-output"))
    }
}
