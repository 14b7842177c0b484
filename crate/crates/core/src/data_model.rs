//! Samples, environments, sessions and the bootstrap corpus.
//!
//! A dataset is a flat collection of timestamped samples, each tagged with
//! the environment (sensor) that recorded it. [`organize_environments`]
//! groups and orders them, [`build_bootstrap`] picks the earliest examples of
//! each class to initialize a classifier, and [`build_sessions`] cuts the rest
//! of an environment's chronology into fixed-length sessions.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use log::warn;

use crate::error::{OalError, Result};

/// A dense, finite feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(OalError::InvalidInput("feature vector must not be empty".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(OalError::InvalidInput(format!(
                "non-finite feature value at index {pos}"
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Per-class presence flags.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(flags: Vec<u8>) -> Result<Self> {
        if flags.is_empty() {
            return Err(OalError::InvalidInput("label vector must not be empty".into()));
        }
        if let Some(bad) = flags.iter().find(|&&f| f > 1) {
            return Err(OalError::InvalidInput(format!("label flags must be 0 or 1, got {bad}")));
        }
        Ok(LabelVector(flags))
    }

    /// Single-target label.
    pub fn single(present: bool) -> Self {
        LabelVector(vec![present as u8])
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn flags(&self) -> &[u8] {
        &self.0
    }

    /// Whether `class` is present. Out-of-range classes are absent.
    pub fn has(&self, class: usize) -> bool {
        self.0.get(class).copied() == Some(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub env_id: String,
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub features: FeatureVector,
    /// Ground truth, when the sample comes from an annotated source.
    pub label: Option<LabelVector>,
}

/// Stream order: timestamp ascending, ties broken by id.
pub fn chronological(a: &Sample, b: &Sample) -> Ordering {
    a.timestamp.total_cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id))
}

/// All samples of one sensor in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub env_id: String,
    pub samples: Vec<Sample>,
}

impl Environment {
    /// Builds an environment, sorting the samples into stream order.
    pub fn new(env_id: impl Into<String>, mut samples: Vec<Sample>) -> Result<Self> {
        let env_id = env_id.into();
        if let Some(s) = samples.iter().find(|s| s.env_id != env_id) {
            return Err(OalError::Record {
                id: s.id.clone(),
                message: format!("belongs to `{}`, not `{env_id}`", s.env_id),
            });
        }
        samples.sort_by(chronological);
        Ok(Environment { env_id, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub index: usize,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapCorpus {
    /// Selected samples, in stream order.
    pub samples: Vec<Sample>,
    pub size_target: usize,
    /// Set when a category had fewer than `size_target / 2` occurrences.
    pub shortfall: bool,
}

impl BootstrapCorpus {
    pub fn empty() -> Self {
        BootstrapCorpus {
            samples: Vec::new(),
            size_target: 0,
            shortfall: false,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }
}

/// The growing set of labeled samples a classifier is updated on.
#[derive(Debug, Clone, Default)]
pub struct AdaptationPool {
    entries: Vec<(Sample, LabelVector)>,
    ids: HashSet<String>,
}

impl AdaptationPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, sample: Sample, label: LabelVector) -> Result<()> {
        if !self.ids.insert(sample.id.clone()) {
            return Err(OalError::DuplicateId(sample.id));
        }
        self.entries.push((sample, label));
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Sample, LabelVector)] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrganizeReport {
    pub environments: Vec<Environment>,
    /// Environments below the duration threshold, with their sample counts.
    pub dropped: Vec<(String, usize)>,
}

/// Groups samples by environment, keeping those with enough recorded audio.
///
/// An environment is retained when `count * sample_duration >=
/// min_total_duration`. Environments come back sorted by id.
pub fn organize_environments(
    samples: Vec<Sample>,
    min_total_duration: f64,
    sample_duration: f64,
) -> Result<OrganizeReport> {
    let mut by_env: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for sample in samples {
        if !seen.insert((sample.env_id.clone(), sample.id.clone())) {
            return Err(OalError::DuplicateId(sample.id));
        }
        by_env.entry(sample.env_id.clone()).or_default().push(sample);
    }

    let mut environments = Vec::new();
    let mut dropped = Vec::new();
    for (env_id, samples) in by_env {
        let duration = samples.len() as f64 * sample_duration;
        if duration >= min_total_duration {
            environments.push(Environment::new(env_id, samples)?);
        } else {
            dropped.push((env_id, samples.len()));
        }
    }
    if !dropped.is_empty() {
        warn!(
            "dropped {} environment(s) below {min_total_duration} s of data",
            dropped.len()
        );
    }
    Ok(OrganizeReport { environments, dropped })
}

/// Selects the first `n / 2` target-present and first `n / 2` target-absent
/// samples of the environment's stream.
///
/// Uses the ground-truth labels carried by the samples; the caller is
/// responsible for charging the selected samples to the annotation budget.
pub fn build_bootstrap(env: &Environment, n: usize, target_class: usize) -> Result<BootstrapCorpus> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(OalError::key(
            "bootstrap",
            format!("bootstrap size must be an even positive integer, got {n}"),
        ));
    }
    let per_class = n / 2;
    let (mut present, mut absent) = (0usize, 0usize);
    let mut samples = Vec::with_capacity(n);
    for sample in &env.samples {
        if present == per_class && absent == per_class {
            break;
        }
        let label = sample.label.as_ref().ok_or_else(|| OalError::Record {
            id: sample.id.clone(),
            message: "bootstrap selection requires ground-truth labels".into(),
        })?;
        let slot = if label.has(target_class) {
            &mut present
        } else {
            &mut absent
        };
        if *slot < per_class {
            *slot += 1;
            samples.push(sample.clone());
        }
    }
    let shortfall = present < per_class || absent < per_class;
    if shortfall {
        warn!(
            "environment `{}`: bootstrap shortfall ({present} present, {absent} absent, wanted {per_class} each)",
            env.env_id
        );
    }
    Ok(BootstrapCorpus {
        samples,
        size_target: n,
        shortfall,
    })
}

/// Partitions the non-bootstrap samples into consecutive sessions of `len`.
///
/// The final session may be shorter than `len`.
pub fn build_sessions(env: &Environment, len: usize, skip: &BootstrapCorpus) -> Vec<Session> {
    assert!(len >= 1, "session length must be positive");
    let skip = skip.ids();
    let remaining: Vec<&Sample> = env.samples.iter().filter(|s| !skip.contains(s.id.as_str())).collect();
    remaining
        .chunks(len)
        .enumerate()
        .map(|(index, chunk)| Session {
            index,
            samples: chunk.iter().map(|&s| s.clone()).collect(),
        })
        .collect()
}
