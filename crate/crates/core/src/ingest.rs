//! Dataset interchange: the binary feature file, the JSON Lines manifest and
//! run reports, plus a synthetic generator of drifting two-class streams.
//!
//! Feature file layout (all little-endian):
//!
//! ```text
//! "OALF" | version: u32 = 1 | dim: u32 | count: u64 | count * dim f32, row-major
//! ```

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::{Environment, FeatureVector, LabelVector, Sample};
use crate::error::{OalError, Result};
use crate::rng;

pub const FEATURE_MAGIC: &[u8; 4] = b"OALF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// A row-major `count x dim` block of f32 features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(OalError::FeatureFormat("dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(OalError::FeatureFormat(format!(
                "{} values do not form rows of {dim}",
                data.len()
            )));
        }
        Ok(FeatureMatrix { dim, data })
    }

    /// Converts rows of f64 features, rounding to f32.
    pub fn from_rows<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut data = Vec::new();
        for row in rows {
            if row.len() != dim {
                return Err(OalError::FeatureFormat(format!(
                    "row of length {} in a {dim}-dimensional matrix",
                    row.len()
                )));
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> Option<&[f32]> {
        self.data.get(i * self.dim..(i + 1) * self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

pub fn encode_features(matrix: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    for v in &matrix.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes one feature block from the front of `bytes`, returning it and the
/// number of bytes consumed.
pub fn decode_features_prefix(bytes: &[u8]) -> Result<(FeatureMatrix, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(OalError::FeatureFormat(format!(
            "header needs {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(OalError::FeatureFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(OalError::FeatureFormat(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(OalError::FeatureFormat("dimension must be positive".into()));
    }
    let body_len = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(dim))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| OalError::FeatureFormat(format!("{count} x {dim} overflows")))?;
    let body = bytes
        .get(HEADER_LEN..)
        .and_then(|rest| rest.get(..body_len))
        .ok_or_else(|| {
            OalError::FeatureFormat(format!(
                "truncated body: expected {body_len} bytes, got {}",
                bytes.len() - HEADER_LEN
            ))
        })?;
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((FeatureMatrix { dim, data }, HEADER_LEN + body_len))
}

/// Decodes a complete feature file; trailing bytes are an error.
pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let (matrix, used) = decode_features_prefix(bytes)?;
    if used != bytes.len() {
        return Err(OalError::FeatureFormat(format!(
            "{} trailing bytes after feature block",
            bytes.len() - used
        )));
    }
    Ok(matrix)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| OalError::io(path, e))?;
    decode_features(&bytes)
}

pub fn write_features(path: impl AsRef<Path>, matrix: &FeatureMatrix) -> Result<()> {
    write_atomic(path.as_ref(), &encode_features(matrix))
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub env: String,
    pub t: f64,
    pub labels: Vec<u8>,
    pub row: u64,
}

/// Parses manifest JSON Lines. Blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let mut num_classes = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| OalError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        let bad = |message: String| OalError::Record {
            id: record.id.clone(),
            message,
        };
        if !record.t.is_finite() {
            return Err(bad("timestamp must be finite".into()));
        }
        if record.labels.is_empty() || record.labels.iter().any(|&l| l > 1) {
            return Err(bad("labels must be a non-empty list of 0/1 flags".into()));
        }
        match num_classes {
            None => num_classes = Some(record.labels.len()),
            Some(n) if n != record.labels.len() => {
                return Err(bad(format!("{} label flags, expected {n}", record.labels.len())));
            }
            _ => {}
        }
        if !ids.insert(record.id.clone()) {
            return Err(OalError::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn render_manifest(records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
        out.push('\n');
    }
    out
}

/// Binds manifest records to feature rows.
pub fn bind_samples(records: Vec<ManifestRecord>, features: &FeatureMatrix) -> Result<Vec<Sample>> {
    records
        .into_iter()
        .map(|r| {
            let row = usize::try_from(r.row)
                .ok()
                .and_then(|i| features.row(i))
                .ok_or_else(|| OalError::Record {
                    id: r.id.clone(),
                    message: format!("feature row {} outside a {}-row file", r.row, features.rows()),
                })?;
            let values: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let features = FeatureVector::new(values).map_err(|e| OalError::Record {
                id: r.id.clone(),
                message: e.to_string(),
            })?;
            Ok(Sample {
                id: r.id,
                env_id: r.env,
                timestamp: r.t,
                features,
                label: Some(LabelVector::new(r.labels)?),
            })
        })
        .collect()
}

/// Loads a manifest and its feature file into labeled samples.
pub fn load_manifest(manifest_path: impl AsRef<Path>, feature_path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| OalError::io(manifest_path, e))?;
    let records = parse_manifest(&text)?;
    let features = read_features(feature_path)?;
    bind_samples(records, &features)
}

/// Writes labeled samples as a manifest plus feature file, rows in the given order.
pub fn save_dataset(samples: &[Sample], manifest_path: impl AsRef<Path>, feature_path: impl AsRef<Path>) -> Result<()> {
    let dim = samples.first().map_or(1, |s| s.features.dim());
    let matrix = FeatureMatrix::from_rows(dim, samples.iter().map(|s| s.features.values()))?;
    let records: Vec<ManifestRecord> = samples
        .iter()
        .enumerate()
        .map(|(row, s)| {
            let labels = s.label.as_ref().ok_or_else(|| OalError::Record {
                id: s.id.clone(),
                message: "cannot write an unlabeled sample to a manifest".into(),
            })?;
            Ok(ManifestRecord {
                id: s.id.clone(),
                env: s.env_id.clone(),
                t: s.timestamp,
                labels: labels.flags().to_vec(),
                row: row as u64,
            })
        })
        .collect::<Result<_>>()?;
    write_features(feature_path, &matrix)?;
    write_atomic(manifest_path.as_ref(), render_manifest(&records).as_bytes())
}

/// Parameters of the synthetic drifting stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub num_envs: usize,
    pub sessions_per_env: usize,
    pub session_len: usize,
    pub dim: usize,
    /// Distance between the two class means at t = 0.
    pub separation: f64,
    /// Linear mean motion, feature units per sample.
    pub velocity: f64,
    pub amplitude: f64,
    /// Sinusoid period, in samples.
    pub period: f64,
    /// Target prior per session; cycled when shorter than the session count.
    pub priors: Vec<f64>,
    pub noise: f64,
    /// Seconds between consecutive samples.
    pub sample_duration: f64,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            num_envs: 4,
            sessions_per_env: 10,
            session_len: 30,
            dim: 16,
            separation: 3.0,
            velocity: 0.002,
            amplitude: 0.5,
            period: 300.0,
            priors: vec![0.5],
            noise: 1.0,
            sample_duration: 10.0,
            seed: 0,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("synth.num_envs", self.num_envs),
            ("synth.sessions_per_env", self.sessions_per_env),
            ("synth.session_len", self.session_len),
            ("synth.dim", self.dim),
        ] {
            if v == 0 {
                return Err(OalError::key(key, "must be positive"));
            }
        }
        if self.priors.is_empty() || self.priors.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(OalError::key(
                "synth.priors",
                "priors must be a non-empty list in [0, 1]",
            ));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(OalError::key("synth.noise", "noise scale must be positive"));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(OalError::key("synth.period", "period must be positive"));
        }
        if !(self.sample_duration > 0.0 && self.sample_duration.is_finite()) {
            return Err(OalError::key("synth.sample_duration", "must be positive"));
        }
        for (key, v) in [
            ("synth.separation", self.separation),
            ("synth.velocity", self.velocity),
            ("synth.amplitude", self.amplitude),
        ] {
            if !v.is_finite() {
                return Err(OalError::key(key, "must be finite"));
            }
        }
        Ok(())
    }

    pub fn prior(&self, session: usize) -> f64 {
        self.priors[session % self.priors.len()]
    }
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates labeled single-target environments whose class means drift
/// linearly and sinusoidally: `mu_c(t) = mu_c(0) + v t u_c + A sin(2 pi t / P) w_c`.
pub fn generate_synthetic_stream(cfg: &DriftConfig) -> Result<Vec<Environment>> {
    cfg.validate()?;
    (0..cfg.num_envs)
        .map(|e| {
            let env_id = format!("env{e:03}");
            let mut rng = rng::stream(rng::mix(cfg.seed, e as u64), rng::streams::SYNTH);
            let axis = unit_vector(&mut rng, cfg.dim);
            let origin: Vec<Vec<f64>> = [-0.5, 0.5]
                .iter()
                .map(|s| axis.iter().map(|a| s * cfg.separation * a).collect())
                .collect();
            let linear: Vec<Vec<f64>> = (0..2).map(|_| unit_vector(&mut rng, cfg.dim)).collect();
            let cyclic: Vec<Vec<f64>> = (0..2).map(|_| unit_vector(&mut rng, cfg.dim)).collect();

            let total = cfg.sessions_per_env * cfg.session_len;
            let mut samples = Vec::with_capacity(total);
            for i in 0..total {
                let session = i / cfg.session_len;
                let present = rng.random::<f64>() < cfg.prior(session);
                let c = present as usize;
                let t = i as f64;
                let shift = cfg.velocity * t;
                let wave = cfg.amplitude * (2.0 * PI * t / cfg.period).sin();
                let values: Vec<f64> = (0..cfg.dim)
                    .map(|k| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        origin[c][k] + shift * linear[c][k] + wave * cyclic[c][k] + cfg.noise * noise
                    })
                    .collect();
                samples.push(Sample {
                    id: format!("{env_id}-{i:06}"),
                    env_id: env_id.clone(),
                    timestamp: t * cfg.sample_duration,
                    features: FeatureVector::new(values)?,
                    label: Some(LabelVector::single(present)),
                });
            }
            Environment::new(env_id, samples)
        })
        .collect()
}

/// One session of a run's trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    pub session: usize,
    pub queried_ids: Vec<String>,
    pub dcf_so_far: f64,
}

/// Persisted outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub paradigm: String,
    pub loss: String,
    pub seed: u64,
    pub dcf: f64,
    pub fnr: f64,
    pub fpr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auprc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_auprc: Option<f64>,
    pub labels_used: u64,
    /// Labels spent on bootstrap corpora (or initial pools).
    #[serde(default)]
    pub labels_bootstrap: u64,
    /// Labels spent on queries.
    #[serde(default)]
    pub labels_queried: u64,
    pub samples_to_start: u64,
    /// Predictions that entered the final metrics.
    #[serde(default)]
    pub evaluated: u64,
    #[serde(default)]
    pub strategy: String,
    #[serde(default)]
    pub flags: Vec<String>,
    pub per_session: Vec<SessionTrace>,
}

pub fn report_line(report: &RunReport) -> String {
    serde_json::to_string(report).expect("reports serialize")
}

pub fn parse_report_line(line: &str) -> Result<RunReport> {
    Ok(serde_json::from_str(line)?)
}

pub fn parse_reports(text: &str) -> Result<Vec<RunReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_report_line(l).map_err(|e| OalError::Line {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Appends one report as a JSON line.
pub fn write_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| OalError::io(path, e))?;
    let mut line = report_line(report);
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| OalError::io(path, e))
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<RunReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| OalError::io(path, e))?;
    parse_reports(&text)
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| OalError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| OalError::io(path, e))
}
