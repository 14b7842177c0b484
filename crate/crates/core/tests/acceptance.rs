//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oal_core::config::{parse_config, DataSource, ExperimentConfig, Paradigm, Settings};
use oal_core::engine::{run_al, run_oal, run_supervised, EngineConfig};
use oal_core::gradcheck::{run_gradcheck, GradcheckOptions};
use oal_core::ingest::{generate_synthetic_stream, report_line, DriftConfig, RunReport};
use oal_core::losses::{dargmax_weight, ddcf_loss, LossConfig};
use oal_core::matrix::{prepare_data, run_cell, run_matrix, RESULTS_FILE, SUMMARY_FILE, TRACE_FILE};
use oal_core::metrics::{auprc, dcf, pr_curve, DEFAULT_W_FN, DEFAULT_W_FP};
use oal_core::network::TrainConfig;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Small network and a faster learning rate for desk-scale synthetic runs.
fn desk_engine(loss: LossConfig) -> EngineConfig {
    EngineConfig {
        hidden: vec![32, 16],
        train: TrainConfig {
            lr: 1e-2,
            ..Default::default()
        },
        loss,
        ..Default::default()
    }
}

// (table, row, FNR, FPR, printed DCF)
const TABLE_ROWS: [(&str, &str, f64, f64, f64); 16] = [
    ("2", "supervised", 0.1661, 0.1871, 0.1714),
    ("2", "OAL", 0.1983, 0.2517, 0.2117),
    ("3", "supervised xent 1:1", 0.2169, 0.1277, 0.1946),
    ("3", "supervised xent 4:1", 0.1661, 0.1871, 0.1714),
    ("3", "supervised e-DCF", 0.1329, 0.1883, 0.1467),
    ("3", "supervised d-DCF", 0.1153, 0.2768, 0.1557),
    ("3", "AL xent 1:1", 0.2332, 0.1311, 0.2077),
    ("3", "AL xent 4:1", 0.2280, 0.1154, 0.1999),
    ("3", "AL e-DCF", 0.1805, 0.1468, 0.1720),
    ("3", "AL d-DCF", 0.1681, 0.1367, 0.1602),
    ("4", "SONYC xent", 0.1983, 0.2517, 0.2117),
    ("4", "SONYC e-DCF", 0.1996, 0.2530, 0.2129),
    ("4", "SONYC d-DCF", 0.3018, 0.3451, 0.3126),
    ("4", "VTD xent", 0.0884, 0.0219, 0.0718),
    ("4", "VTD e-DCF", 0.1159, 0.0260, 0.0934),
    ("4", "VTD d-DCF", 0.1423, 0.0397, 0.1166),
];

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    let mut distinct = BTreeSet::new();
    for (table, row, fnr, fpr, printed) in TABLE_ROWS {
        distinct.insert((fnr.to_bits(), fpr.to_bits(), printed.to_bits()));
        let err = (dcf(fnr, fpr, DEFAULT_W_FN, DEFAULT_W_FP) - printed).abs();
        worst = worst.max(err);
        if err > 6e-4 {
            bad.push(format!("table {table} {row}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} rows ({} distinct triples), max |error| {worst:.2e} (tol 6e-4){}",
            TABLE_ROWS.len(),
            distinct.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!("; off: {}", bad.join(", "))
            }
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let report = run_gradcheck(&GradcheckOptions::default());
    let required = [
        "xent-1:1",
        "xent-4:1",
        "edcf",
        "ddcf-lambda1",
        "ddcf-lambda100",
        "contrastive",
    ];
    let names: Vec<&str> = report.cases.iter().map(|c| c.name.as_str()).collect();
    let missing: Vec<&str> = required.iter().copied().filter(|r| !names.contains(r)).collect();
    let combined = names.iter().filter(|n| n.starts_with("combined/")).count();
    let worst = report.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let points_ok = report.cases.iter().all(|c| c.points == 10);
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        report.passed() && missing.is_empty() && combined > 0 && points_ok && elapsed < 10.0,
        format!(
            "{} cases incl. {combined} combined, max rel err {worst:.2e} (tol 1e-4), {elapsed:.2}s{}{}",
            report.cases.len(),
            if missing.is_empty() {
                String::new()
            } else {
                format!("; missing {missing:?}")
            },
            if report.passed() {
                String::new()
            } else {
                format!("; failing {:?}", report.failures())
            }
        ),
    )
}

fn hard_dcf(posteriors: &[f64], labels: &[bool]) -> f64 {
    let (mut fn_, mut fp, mut pos, mut neg) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &y) in posteriors.iter().zip(labels) {
        let decided = p > 0.5;
        if y {
            pos += 1.0;
            if !decided {
                fn_ += 1.0;
            }
        } else {
            neg += 1.0;
            if decided {
                fp += 1.0;
            }
        }
    }
    let fnr = if pos > 0.0 { fn_ / pos } else { 0.0 };
    let fpr = if neg > 0.0 { fp / neg } else { 0.0 };
    0.75 * fnr + 0.25 * fpr
}

fn criterion_3() -> Outcome {
    let mut worst_weight: f64 = 0.0;
    for k in 0..=1000 {
        let p = k as f64 / 1000.0;
        if (p - 0.5).abs() < 0.05 - 1e-12 {
            continue;
        }
        let indicator = if p > 0.5 { 1.0 } else { 0.0 };
        worst_weight = worst_weight.max((dargmax_weight(p, 1000.0) - indicator).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_loss: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=64);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let posteriors: Vec<f64> = (0..n)
            .map(|_| {
                let offset = rng.random_range(0.05..=0.5);
                if rng.random_bool(0.5) {
                    0.5 + offset
                } else {
                    0.5 - offset
                }
            })
            .collect();
        let soft = ddcf_loss(&posteriors, &labels, 1000.0, 0.75, 0.25).value;
        worst_loss = worst_loss.max((soft - hard_dcf(&posteriors, &labels)).abs());
    }
    outcome(
        worst_weight <= 1e-3 && worst_loss <= 1e-6,
        format!("max |dargmax - indicator| {worst_weight:.2e} (tol 1e-3), max |ddcf - hard DCF| {worst_loss:.2e} (tol 1e-6)"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let (envs, sessions, budget, bootstrap, len) = (3usize, 4usize, 5usize, 8usize, 30usize);
    // Each environment holds exactly N + S * L samples.
    let stream = generate_synthetic_stream(&DriftConfig {
        num_envs: envs,
        sessions_per_env: 1,
        session_len: bootstrap + sessions * len,
        dim: 8,
        seed: 4,
        ..Default::default()
    })
    .expect("stream");
    let engine = EngineConfig {
        hidden: vec![8, 4],
        train: TrainConfig {
            max_epochs: 5,
            fallback_epochs: 5,
            lr: 1e-2,
            ..Default::default()
        },
        session_len: len,
        budget,
        bootstrap,
        ..Default::default()
    };
    let report = run_oal(&stream, &engine, 0).expect("oal run");
    let expected = (envs * bootstrap + envs * sessions * budget) as u64;
    let shortfall = report.flags.iter().any(|f| f.starts_with("bootstrap_shortfall"));
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        report.labels_used == expected && report.samples_to_start == len as u64 && !shortfall && elapsed < 1.0,
        format!(
            "labels_used {} (expected {expected}), samples_to_start {} (expected {len}), {elapsed:.2}s",
            report.labels_used, report.samples_to_start
        ),
    )
}

fn drift_experiment(source: DriftConfig) -> ExperimentConfig {
    ExperimentConfig {
        source: DataSource::Synthetic(source),
        ..Default::default()
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let cfg = drift_experiment(DriftConfig {
        num_envs: 8,
        sessions_per_env: 20,
        session_len: 30,
        dim: 16,
        seed: 100,
        ..Default::default()
    });
    let loss = LossConfig::default();
    let engine = desk_engine(loss);
    let mut holds = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let data = prepare_data(&cfg, seed).expect("data");
        let total: usize = data.environments.iter().map(|e| e.len()).sum();
        let oal = run_cell(Paradigm::Oal, &engine, &loss, &data, seed).expect("oal run");
        let sup = run_cell(Paradigm::Supervised, &engine, &loss, &data, seed).expect("supervised run");
        let share = oal.labels_used as f64 / total as f64;
        let ok = oal.dcf <= 1.5 * sup.dcf && share <= 0.20;
        holds += ok as usize;
        lines.push(format!("{:.3}/{:.3}@{:.0}%", oal.dcf, sup.dcf, 100.0 * share));
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        holds >= 4 && elapsed < 300.0,
        format!(
            "holds on {holds}/5 seeds; oal/supervised DCF @ label share: {}; {elapsed:.1}s",
            lines.join(" ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = drift_experiment(DriftConfig {
        num_envs: 1,
        sessions_per_env: 100,
        session_len: 30,
        dim: 16,
        priors: vec![0.2],
        seed: 200,
        ..Default::default()
    });
    let (xent, edcf) = (LossConfig::xent(1.0, 1.0), LossConfig::edcf());
    let mut sums = [[0.0; 2]; 2];
    for seed in 0..5u64 {
        let data = prepare_data(&cfg, seed).expect("data");
        for (k, loss) in [xent, edcf].iter().enumerate() {
            let r = run_cell(Paradigm::Supervised, &desk_engine(*loss), loss, &data, seed).expect("supervised run");
            sums[k][0] += r.fnr / 5.0;
            sums[k][1] += r.dcf / 5.0;
        }
    }
    let [[x_fnr, x_dcf], [e_fnr, e_dcf]] = sums;
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        e_fnr < x_fnr && e_dcf <= x_dcf && elapsed < 300.0,
        format!(
            "mean FNR e-DCF {e_fnr:.4} vs xent {x_fnr:.4}; mean DCF e-DCF {e_dcf:.4} vs xent {x_dcf:.4}; {elapsed:.1}s"
        ),
    )
}

fn lines(reports: &[RunReport]) -> Vec<String> {
    reports.iter().map(report_line).collect()
}

fn criterion_7() -> Outcome {
    let cfg = drift_experiment(DriftConfig {
        num_envs: 2,
        sessions_per_env: 4,
        dim: 8,
        seed: 7,
        ..Default::default()
    });
    let engine = EngineConfig {
        hidden: vec![8, 4],
        al_steps: 2,
        al_budget: 10,
        ..desk_engine(LossConfig::ddcf(100.0))
    };
    let run_all = || -> Vec<RunReport> {
        let data = prepare_data(&cfg, 13).expect("data");
        let pool: Vec<_> = data.train.iter().chain(&data.val).cloned().collect();
        vec![
            run_oal(&data.environments, &engine, 13).expect("oal"),
            run_al(&pool, &data.test, &engine, 13).expect("al"),
            run_supervised(&data.train, &data.val, &data.test, &engine, 13)
                .expect("supervised")
                .0,
        ]
    };
    let direct = lines(&run_all()) == lines(&run_all());

    let dirs = [tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp")];
    let mut files = Vec::new();
    for dir in &dirs {
        let text = format!(
            "out = {}\nparadigm = oal,al,supervised\nloss = xent-4:1,edcf\nseeds = 1,2\njobs = 4\nhidden = 8,4\nlr = 0.01\n\
             synth.num_envs = 2\nsynth.sessions_per_env = 3\nsynth.dim = 8\nal_steps = 2\nal_budget = 5\n",
            dir.path().display()
        );
        let cfg = parse_config(&Settings::parse(&text).expect("settings")).expect("config");
        let outcome = run_matrix(&cfg).expect("matrix");
        assert!(outcome.failures.is_empty());
        files.push([RESULTS_FILE, SUMMARY_FILE, TRACE_FILE].map(|f| fs::read(dir.path().join(f)).expect("artifact")));
    }
    let matrix = files[0] == files[1];
    outcome(
        direct && matrix,
        format!("direct runs identical: {direct}; 12-run parallel matrix artifacts identical: {matrix}"),
    )
}

/// Average precision by enumerating every distinct threshold.
/// (threshold, recall, precision)
type Point = (f64, f64, f64);

fn brute_force_ap(scores: &[f64], labels: &[bool]) -> Option<(Vec<Point>, f64)> {
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, y)| **s >= t && **y).count();
        let fp = scores.iter().zip(labels).filter(|(s, y)| **s >= t && !**y).count();
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev) * precision;
        prev = recall;
        points.push((t, recall, precision));
    }
    Some((points, ap))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for i in 0..200 {
        let n = rng.random_range(1..=50);
        // Coarse scores on even instances force ties.
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if i % 2 == 0 {
                    rng.random_range(0..8) as f64 / 8.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let got = pr_curve(&scores, &labels).map(|c| {
            let pts: Vec<Point> = c.iter().map(|p| (p.threshold, p.recall, p.precision)).collect();
            (pts, auprc(&c))
        });
        if got != brute_force_ap(&scores, &labels) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && elapsed < 10.0,
        format!("200 instances, {mismatches} mismatches against threshold enumeration, {elapsed:.2}s"),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("DCF formula matches printed table triples", criterion_1),
        ("analytic gradients match finite differences", criterion_2),
        ("d-argmax reaches the hard decision at large lambda", criterion_3),
        ("label accounting identity", criterion_4),
        ("OAL efficacy on a drifting stream", criterion_5),
        ("e-DCF lowers FNR and DCF against cross-entropy", criterion_6),
        ("repeated runs give byte-identical reports", criterion_7),
        ("AUPRC equals brute-force enumeration", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name} - {}",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
