//! Flat `key = value` run configuration and run manifests.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LerError, Result};
use crate::pipeline::{HyperParams, TargetMode};
use crate::sim::{SimConfig, TraitModel};

/// Everything a run can be configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hyper: HyperParams,
    pub sim: SimConfig,
    pub reps: usize,
    pub top: usize,
    pub importance_order: usize,
    pub gwas_exact: bool,
    pub gwas_pcs: usize,
    /// Phenotype covariate columns to use; `None` keeps all of them.
    pub covariates: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hyper: HyperParams::default(),
            sim: SimConfig::default(),
            reps: 20,
            top: 20,
            importance_order: 2,
            gwas_exact: false,
            gwas_pcs: 0,
            covariates: None,
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Unsigned,
    Real,
    Bool,
    Text,
    List,
}

impl Kind {
    fn describe(self) -> &'static str {
        match self {
            Kind::Unsigned => "a non-negative integer",
            Kind::Real => "a number",
            Kind::Bool => "true or false",
            Kind::Text => "a string",
            Kind::List => "a comma-separated list",
        }
    }
}

const KEYS: &[(&str, Kind)] = &[
    ("nsplits", Kind::Unsigned),
    ("hotspots", Kind::Text),
    ("nrules", Kind::Unsigned),
    ("mean_depth", Kind::Real),
    ("proprow", Kind::Real),
    ("propcol", Kind::Real),
    ("memory", Kind::Real),
    ("min_node", Kind::Unsigned),
    ("prune_cp", Kind::Real),
    ("l1_ratio", Kind::Real),
    ("enet_folds", Kind::Unsigned),
    ("n_pcs", Kind::Unsigned),
    ("target", Kind::Text),
    ("cv_folds", Kind::Unsigned),
    ("seed", Kind::Unsigned),
    ("sim_n", Kind::Unsigned),
    ("sim_m", Kind::Unsigned),
    ("freq_min", Kind::Real),
    ("freq_max", Kind::Real),
    ("h2", Kind::Real),
    ("sex_effect", Kind::Real),
    ("trait", Kind::Text),
    ("reps", Kind::Unsigned),
    ("top", Kind::Unsigned),
    ("importance_order", Kind::Unsigned),
    ("gwas_exact", Kind::Bool),
    ("gwas_pcs", Kind::Unsigned),
    ("covariates", Kind::List),
];

pub fn valid_keys() -> Vec<&'static str> {
    KEYS.iter().map(|(k, _)| *k).collect()
}

enum Value {
    Unsigned(u64),
    Real(f64),
    Bool(bool),
    Text(String),
    List(Vec<String>),
}

fn parse_value(key: &str, kind: Kind, raw: &str, line: usize) -> Result<Value> {
    let bad = || LerError::Config(format!("line {line}: `{key}` expects {}, got `{raw}`", kind.describe()));
    Ok(match kind {
        Kind::Unsigned => Value::Unsigned(raw.parse().map_err(|_| bad())?),
        Kind::Real => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            Value::Real(v)
        }
        Kind::Bool => match raw {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => return Err(bad()),
        },
        Kind::Text => {
            if raw.is_empty() {
                return Err(bad());
            }
            Value::Text(raw.to_string())
        }
        Kind::List => Value::List(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        ),
    })
}

fn usize_of(v: u64, key: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| LerError::Config(format!("`{key}` is too large")))
}

impl RunConfig {
    fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let hp = &mut self.hyper;
        let sim = &mut self.sim;
        match (key, value) {
            ("nsplits", Value::Unsigned(v)) => hp.nsplits = usize_of(v, key)?,
            ("hotspots", Value::Text(v)) => hp.hotspots = Some(v),
            ("nrules", Value::Unsigned(v)) => hp.nrules = usize_of(v, key)?,
            ("mean_depth", Value::Real(v)) => hp.mean_depth = v,
            ("proprow", Value::Real(v)) => hp.proprow = v,
            ("propcol", Value::Real(v)) => hp.propcol = v,
            ("memory", Value::Real(v)) => hp.memory = v,
            ("min_node", Value::Unsigned(v)) => hp.min_node = usize_of(v, key)?,
            ("prune_cp", Value::Real(v)) => hp.prune_cp = v,
            ("l1_ratio", Value::Real(v)) => hp.l1_ratio = v,
            ("enet_folds", Value::Unsigned(v)) => hp.enet_folds = usize_of(v, key)?,
            ("n_pcs", Value::Unsigned(v)) => hp.n_pcs = usize_of(v, key)?,
            ("target", Value::Text(v)) => hp.target = v.parse::<TargetMode>()?,
            ("cv_folds", Value::Unsigned(v)) => hp.cv_folds = usize_of(v, key)?,
            ("seed", Value::Unsigned(v)) => self.set_seed(v),
            ("sim_n", Value::Unsigned(v)) => sim.n = usize_of(v, key)?,
            ("sim_m", Value::Unsigned(v)) => sim.m = usize_of(v, key)?,
            ("freq_min", Value::Real(v)) => sim.freq_min = v,
            ("freq_max", Value::Real(v)) => sim.freq_max = v,
            ("h2", Value::Real(v)) => sim.h2 = v,
            ("sex_effect", Value::Real(v)) => sim.sex_effect = v,
            ("trait", Value::Text(v)) => sim.trait_model = v.parse::<TraitModel>()?,
            ("reps", Value::Unsigned(v)) => self.reps = usize_of(v, key)?,
            ("top", Value::Unsigned(v)) => self.top = usize_of(v, key)?,
            ("importance_order", Value::Unsigned(v)) => self.importance_order = usize_of(v, key)?,
            ("gwas_exact", Value::Bool(v)) => self.gwas_exact = v,
            ("gwas_pcs", Value::Unsigned(v)) => self.gwas_pcs = usize_of(v, key)?,
            ("covariates", Value::List(v)) => self.covariates = Some(v),
            _ => unreachable!("key table and setter disagree on `{key}`"),
        }
        Ok(())
    }

    /// One seed drives both the fit and the simulation.
    pub fn set_seed(&mut self, seed: u64) {
        self.hyper.seed = seed;
        self.sim.seed = seed;
    }

    pub fn seed(&self) -> u64 {
        self.hyper.seed
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: LerError| match e {
            LerError::Argument(msg) => LerError::Config(msg),
            other => other,
        };
        self.hyper.validate().map_err(wrap)?;
        self.sim.validate().map_err(wrap)?;
        if self.reps == 0 {
            return Err(LerError::Config("`reps` must be at least 1".into()));
        }
        if self.top == 0 {
            return Err(LerError::Config("`top` must be at least 1".into()));
        }
        if self.importance_order < 2 {
            return Err(LerError::Config("`importance_order` must be at least 2".into()));
        }
        Ok(())
    }

    /// Overlay `key = value` lines onto the defaults.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.overlay_str(text)?;
        Ok(cfg)
    }

    pub fn overlay_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| LerError::Config(format!("line {line}: expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let kind = KEYS
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, kind)| *kind)
                .ok_or_else(|| {
                    LerError::Config(format!(
                        "line {line}: unknown key `{key}`; valid keys are {}",
                        valid_keys().join(", ")
                    ))
                })?;
            let v = parse_value(key, kind, value, line)?;
            self.set(key, v)?;
        }
        self.validate()
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LerError::io(path, e))?;
    RunConfig::parse_str(&text)
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LerError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(role: &str, path: impl AsRef<Path>) -> Result<FileDigest> {
        let path = path.as_ref();
        Ok(FileDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }

    /// Error unless the file still has the recorded digest.
    pub fn verify(&self) -> Result<()> {
        let found = match sha256_file(&self.path) {
            Ok(d) => d,
            Err(LerError::Io { .. }) => "missing".to_string(),
            Err(e) => return Err(e),
        };
        if found != self.sha256 {
            return Err(LerError::DigestMismatch {
                path: self.path.clone(),
                expected: self.sha256.clone(),
                found,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

pub const MANIFEST_FORMAT: &str = "ler-manifest";

/// Record of one CLI run: enough to re-run it and check the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: &RunConfig, threads: Option<usize>) -> RunManifest {
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv,
            seed: config.seed(),
            threads,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<RunManifest> {
        let m: RunManifest = serde_json::from_str(text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(LerError::Validation(format!(
                "not a run manifest (format {:?})",
                m.format
            )));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LerError::io(path, e))?;
        RunManifest::from_json(&text)
    }

    pub fn verify_inputs(&self) -> Result<()> {
        self.inputs.iter().try_for_each(FileDigest::verify)
    }

    pub fn verify_outputs(&self) -> Result<()> {
        self.outputs.iter().try_for_each(FileDigest::verify)
    }
}

pub fn write_manifest(manifest: &RunManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json()?).map_err(|e| LerError::io(path, e))
}
