//! Experiment configuration: a `key = value` file with command-line overrides.
//!
//! Blank lines and lines starting with `#` are ignored. List values are
//! comma-separated. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{OalError, Result};
use crate::ingest::DriftConfig;
use crate::losses::{DargmaxInput, LossConfig};
use crate::query::QueryStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Supervised,
    Al,
    Oal,
}

impl Paradigm {
    pub fn name(&self) -> &'static str {
        match self {
            Paradigm::Supervised => "supervised",
            Paradigm::Al => "al",
            Paradigm::Oal => "oal",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim() {
            "supervised" => Ok(Paradigm::Supervised),
            "al" => Ok(Paradigm::Al),
            "oal" => Ok(Paradigm::Oal),
            other => Err(OalError::key("paradigm", format!("unknown paradigm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    /// Drifting synthetic stream. The generator seed is `synth.seed` plus the
    /// run seed, so every repeat sees a fresh stream.
    Synthetic(DriftConfig),
    Manifest {
        manifest: PathBuf,
        features: PathBuf,
    },
}

/// Fractions of the shuffled data used for training and validation by the
/// supervised and pool-based paradigms; the rest is the test set. For pool
/// AL the training and validation parts together form the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.6,
            val: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub paradigms: Vec<Paradigm>,
    pub losses: Vec<LossConfig>,
    pub seeds: Vec<u64>,
    pub engine: EngineConfig,
    pub source: DataSource,
    pub split: SplitConfig,
    /// Environments shorter than this many seconds are dropped.
    pub min_total_duration: f64,
    pub sample_duration: f64,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            paradigms: vec![Paradigm::Oal],
            losses: vec![LossConfig::default()],
            seeds: vec![0],
            engine: EngineConfig::default(),
            source: DataSource::Synthetic(DriftConfig::default()),
            split: SplitConfig::default(),
            min_total_duration: 0.0,
            sample_duration: 10.0,
            out_dir: PathBuf::from("out"),
            jobs: 1,
        }
    }
}

/// Raw key/value settings gathered from a file and overrides, applied in order.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    entries: Vec<(String, String)>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| OalError::Line {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Settings { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| OalError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.entries.push((key.into(), value.into()));
        self
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| OalError::key(key, format!("cannot parse `{value}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(OalError::key(key, format!("expected true or false, got `{value}`"))),
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

#[derive(Default)]
struct LossOverrides {
    lambda: Option<f64>,
    margin: Option<f64>,
    w_fn: Option<f64>,
    w_fp: Option<f64>,
    dargmax_input: Option<DargmaxInput>,
}

/// Builds a validated configuration from settings.
pub fn parse_config(settings: &Settings) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut synth = DriftConfig::default();
    let mut manifest: Option<PathBuf> = None;
    let mut features: Option<PathBuf> = None;
    let mut loss_names = vec!["xent".to_string()];
    let mut over = LossOverrides::default();
    let e = &mut cfg.engine;

    for (key, value) in settings.entries() {
        let (k, v) = (key.as_str(), value.as_str());
        match k {
            "paradigm" | "paradigms" => {
                cfg.paradigms = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(Paradigm::from_name)
                    .collect::<Result<_>>()?
            }
            "loss" | "losses" => {
                loss_names = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "seed" | "seeds" => cfg.seeds = list(k, v)?,
            "out" => cfg.out_dir = PathBuf::from(v),
            "jobs" => cfg.jobs = num(k, v)?,
            "lr" => e.train.lr = num(k, v)?,
            "weight_decay" => e.train.weight_decay = num(k, v)?,
            "batch_size" => e.train.batch_size = num(k, v)?,
            "max_epochs" => e.train.max_epochs = num(k, v)?,
            "patience" => e.train.patience = num(k, v)?,
            "validation_fraction" => e.train.validation_fraction = num(k, v)?,
            "min_val_per_class" => e.train.min_val_per_class = num(k, v)?,
            "fallback_epochs" => e.train.fallback_epochs = num(k, v)?,
            "hidden" => e.hidden = list(k, v)?,
            "lambda" => over.lambda = Some(num(k, v)?),
            "margin" => over.margin = Some(num(k, v)?),
            "w_fn" => over.w_fn = Some(num(k, v)?),
            "w_fp" => over.w_fp = Some(num(k, v)?),
            "dargmax_input" => {
                over.dargmax_input = Some(match v {
                    "posterior" => DargmaxInput::Posterior,
                    "logit" => DargmaxInput::Logit,
                    _ => return Err(OalError::key(k, "expected posterior or logit")),
                })
            }
            "strategy" => e.strategy = QueryStrategy::from_name(v)?,
            "temperature" => e.temperature = num(k, v)?,
            "session_len" => e.session_len = num(k, v)?,
            "budget" => e.budget = num(k, v)?,
            "bootstrap" => e.bootstrap = num(k, v)?,
            "target_class" => e.target_class = num(k, v)?,
            "retrain_from_scratch" => e.retrain_from_scratch = boolean(k, v)?,
            "shared_model" => e.shared_model = boolean(k, v)?,
            "al_steps" => e.al_steps = num(k, v)?,
            "al_budget" => e.al_budget = num(k, v)?,
            "manifest" => manifest = Some(PathBuf::from(v)),
            "features" => features = Some(PathBuf::from(v)),
            "min_total_duration" => cfg.min_total_duration = num(k, v)?,
            "sample_duration" => cfg.sample_duration = num(k, v)?,
            "split.train" => cfg.split.train = num(k, v)?,
            "split.val" => cfg.split.val = num(k, v)?,
            "split.seed" => cfg.split.seed = num(k, v)?,
            "synth.num_envs" => synth.num_envs = num(k, v)?,
            "synth.sessions_per_env" => synth.sessions_per_env = num(k, v)?,
            "synth.session_len" => synth.session_len = num(k, v)?,
            "synth.dim" => synth.dim = num(k, v)?,
            "synth.separation" => synth.separation = num(k, v)?,
            "synth.velocity" => synth.velocity = num(k, v)?,
            "synth.amplitude" => synth.amplitude = num(k, v)?,
            "synth.period" => synth.period = num(k, v)?,
            "synth.priors" => synth.priors = list(k, v)?,
            "synth.noise" => synth.noise = num(k, v)?,
            "synth.sample_duration" => synth.sample_duration = num(k, v)?,
            "synth.seed" => synth.seed = num(k, v)?,
            _ => return Err(OalError::key(k, "unknown configuration key")),
        }
    }

    cfg.losses = loss_names
        .iter()
        .map(|name| {
            let mut loss = LossConfig::from_name(name)?;
            if let Some(l) = over.lambda {
                loss.lambda = l;
            }
            if let Some(m) = over.margin {
                loss.margin = m;
            }
            if let Some(w) = over.w_fn {
                loss.w_fn = w;
                if over.w_fp.is_none() {
                    loss.w_fp = 1.0 - w;
                }
            }
            if let Some(w) = over.w_fp {
                loss.w_fp = w;
                if over.w_fn.is_none() {
                    loss.w_fn = 1.0 - w;
                }
            }
            if let Some(d) = over.dargmax_input {
                loss.dargmax_input = d;
            }
            Ok(loss)
        })
        .collect::<Result<_>>()?;
    cfg.engine.train.target_class = cfg.engine.target_class;
    cfg.source = match (manifest, features) {
        (Some(manifest), Some(features)) => DataSource::Manifest { manifest, features },
        (None, None) => DataSource::Synthetic(synth),
        (Some(_), None) => return Err(OalError::key("features", "required together with `manifest`")),
        (None, Some(_)) => return Err(OalError::key("manifest", "required together with `features`")),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(OalError::key("seeds", "at least one seed is required"));
        }
        if self.paradigms.is_empty() {
            return Err(OalError::key("paradigm", "at least one paradigm is required"));
        }
        if self.losses.is_empty() {
            return Err(OalError::key("loss", "at least one loss is required"));
        }
        for loss in &self.losses {
            loss.validate()?;
        }
        self.engine.validate()?;
        if self.jobs == 0 {
            return Err(OalError::key("jobs", "must be at least 1"));
        }
        let SplitConfig { train, val, .. } = self.split;
        if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
            return Err(OalError::key(
                "split.train",
                "train and val fractions must be positive and sum below 1",
            ));
        }
        match &self.source {
            DataSource::Synthetic(d) => d.validate()?,
            DataSource::Manifest { manifest, features } => {
                for (key, path) in [("manifest", manifest), ("features", features)] {
                    if !path.exists() {
                        return Err(OalError::key(key, format!("`{}` does not exist", path.display())));
                    }
                }
            }
        }
        Ok(())
    }
}
