//! Experiment grid: paradigm × loss × seed, with JSONL and CSV outputs.

use std::fs;
use std::path::Path;

use log::{error, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, Paradigm};
use crate::data_model::{organize_environments, Environment, Sample};
use crate::engine::{run_al, run_oal, run_supervised, EngineConfig};
use crate::error::{OalError, Result};
use crate::ingest::{generate_synthetic_stream, load_manifest, report_line, write_atomic, RunReport};
use crate::losses::LossConfig;
use crate::rng;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "trace.csv";

/// Data for one seed, shared by every cell that uses that seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub environments: Vec<Environment>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Loads or generates the data of a run and splits it for the
/// non-streaming paradigms.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let environments = match &cfg.source {
        DataSource::Synthetic(drift) => {
            let mut drift = drift.clone();
            drift.seed = drift.seed.wrapping_add(seed);
            generate_synthetic_stream(&drift)?
        }
        DataSource::Manifest { manifest, features } => {
            let samples = load_manifest(manifest, features)?;
            let report = organize_environments(samples, cfg.min_total_duration, cfg.sample_duration)?;
            for (env, len) in &report.dropped {
                info!("dropped environment `{env}` with {len} samples");
            }
            report.environments
        }
    };
    let mut all: Vec<Sample> = environments.iter().flat_map(|e| e.samples.iter().cloned()).collect();
    all.sort_by(|a, b| a.id.cmp(&b.id));
    all.shuffle(&mut rng::stream(cfg.split.seed, rng::streams::SPLIT));
    let n = all.len();
    let n_train = (n as f64 * cfg.split.train).round() as usize;
    let n_val = (n as f64 * cfg.split.val).round() as usize;
    let test = all.split_off((n_train + n_val).min(n));
    let val = all.split_off(n_train.min(all.len()));
    Ok(PreparedData {
        environments,
        train: all,
        val,
        test,
    })
}

/// Runs a single cell.
pub fn run_cell(
    paradigm: Paradigm,
    engine: &EngineConfig,
    loss: &LossConfig,
    data: &PreparedData,
    seed: u64,
) -> Result<RunReport> {
    let cfg = EngineConfig {
        loss: *loss,
        ..engine.clone()
    };
    match paradigm {
        Paradigm::Oal => run_oal(&data.environments, &cfg, seed),
        Paradigm::Al => {
            let pool: Vec<Sample> = data.train.iter().chain(&data.val).cloned().collect();
            run_al(&pool, &data.test, &cfg, seed)
        }
        Paradigm::Supervised => Ok(run_supervised(&data.train, &data.val, &data.test, &cfg, seed)?.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub paradigm: String,
    pub loss: String,
    pub runs: usize,
    pub dcf_mean: f64,
    pub dcf_std: f64,
    pub fnr_mean: f64,
    pub fnr_std: f64,
    pub fpr_mean: f64,
    pub fpr_std: f64,
    pub labels_used_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub run_id: String,
    pub paradigm: String,
    pub loss: String,
    pub seed: u64,
    pub env: String,
    pub session: usize,
    pub queried: usize,
    pub dcf_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub paradigm: Paradigm,
    pub loss: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub reports: Vec<RunReport>,
    pub failures: Vec<CellFailure>,
    pub summary: Vec<SummaryRow>,
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-(paradigm, loss) aggregates, in order of first appearance.
pub fn summarize(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in reports {
        let key = (r.paradigm.clone(), r.loss.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(paradigm, loss)| {
            let cell: Vec<&RunReport> = reports
                .iter()
                .filter(|r| r.paradigm == paradigm && r.loss == loss)
                .collect();
            let pick = |f: fn(&RunReport) -> f64| mean_std(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (dcf_mean, dcf_std) = pick(|r| r.dcf);
            let (fnr_mean, fnr_std) = pick(|r| r.fnr);
            let (fpr_mean, fpr_std) = pick(|r| r.fpr);
            let (labels_used_mean, _) = pick(|r| r.labels_used as f64);
            SummaryRow {
                paradigm,
                loss,
                runs: cell.len(),
                dcf_mean,
                dcf_std,
                fnr_mean,
                fnr_std,
                fpr_mean,
                fpr_std,
                labels_used_mean,
            }
        })
        .collect()
}

pub fn trace_rows(reports: &[RunReport]) -> Vec<TraceRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.per_session.iter().map(move |s| TraceRow {
                run_id: r.run_id.clone(),
                paradigm: r.paradigm.clone(),
                loss: r.loss.clone(),
                seed: r.seed,
                env: s.env.clone().unwrap_or_default(),
                session: s.session,
                queried: s.queried_ids.len(),
                dcf_so_far: s.dcf_so_far,
            })
        })
        .collect()
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| OalError::InvalidInput(e.to_string()))?;
    }
    w.into_inner().map_err(|e| OalError::InvalidInput(e.to_string()))
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| OalError::InvalidInput(e.to_string()))
}

pub fn reports_jsonl(reports: &[RunReport]) -> String {
    reports.iter().map(|r| report_line(r) + "\n").collect()
}

/// Writes the results, summary and trace files for a set of reports.
pub fn write_outputs(out_dir: &Path, reports: &[RunReport]) -> Result<Vec<SummaryRow>> {
    fs::create_dir_all(out_dir).map_err(|e| OalError::io(out_dir, e))?;
    let summary = summarize(reports);
    write_atomic(&out_dir.join(RESULTS_FILE), reports_jsonl(reports).as_bytes())?;
    write_atomic(&out_dir.join(SUMMARY_FILE), &to_csv(&summary)?)?;
    write_atomic(&out_dir.join(TRACE_FILE), &to_csv(&trace_rows(reports))?)?;
    Ok(summary)
}

/// Runs the whole grid. Individual failures are recorded and the grid
/// continues; each finished run is also written to `runs/<run_id>.jsonl`.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<MatrixOutcome> {
    cfg.validate()?;
    let runs_dir = cfg.out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| OalError::io(&runs_dir, e))?;

    let mut cells = Vec::new();
    for &paradigm in &cfg.paradigms {
        for loss in &cfg.losses {
            for &seed in &cfg.seeds {
                cells.push((paradigm, *loss, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| OalError::Config(format!("thread pool: {e}")))?;

    let data: Vec<Result<PreparedData>> =
        pool.install(|| cfg.seeds.par_iter().map(|&s| prepare_data(cfg, s)).collect());
    let outcomes: Vec<Result<RunReport>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(paradigm, loss, seed)| {
                let idx = cfg.seeds.iter().position(|s| s == seed).expect("seed in grid");
                let prepared = data[idx]
                    .as_ref()
                    .map_err(|e| OalError::Config(format!("data preparation: {e}")))?;
                let report = run_cell(*paradigm, &cfg.engine, loss, prepared, *seed)?;
                write_atomic(
                    &runs_dir.join(format!("{}.jsonl", report.run_id.replace([':', '/'], "_"))),
                    (report_line(&report) + "\n").as_bytes(),
                )?;
                Ok(report)
            })
            .collect()
    });

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for ((paradigm, loss, seed), outcome) in cells.into_iter().zip(outcomes) {
        match outcome {
            Ok(r) => reports.push(r),
            Err(e) => {
                error!("{} / {} / seed {seed} failed: {e}", paradigm.name(), loss.name());
                failures.push(CellFailure {
                    paradigm,
                    loss: loss.name(),
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    let summary = write_outputs(&cfg.out_dir, &reports)?;
    Ok(MatrixOutcome {
        reports,
        failures,
        summary,
    })
}
