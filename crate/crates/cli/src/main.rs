use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use oal_core::config::{parse_config, DataSource, ExperimentConfig, Paradigm, Settings};
use oal_core::engine::{run_supervised, EngineConfig};
use oal_core::gradcheck::{run_gradcheck, GradcheckOptions};
use oal_core::ingest::{generate_synthetic_stream, load_manifest, read_reports, save_dataset, write_atomic};
use oal_core::matrix::{prepare_data, run_matrix, write_outputs, SUMMARY_FILE};
use oal_core::metrics::{auprc_of, error_rates, ConfusionCounts};
use oal_core::network::{predict, read_checkpoint, stack_features, write_checkpoint};

#[derive(Parser)]
#[command(name = "oal", version, about = "Online active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a drifting synthetic dataset as a manifest plus feature file.
    Synth(RunArgs),
    /// Fully-supervised training with early stopping.
    Supervised(SupervisedArgs),
    /// Pool-based active learning.
    Al(RunArgs),
    /// Stream-based online active learning.
    Oal(RunArgs),
    /// Evaluate a saved classifier on a manifest.
    Eval(EvalArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(GradcheckArgs),
    /// Recompute summary and trace CSVs from a results file.
    Summarize(SummarizeArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; repeat for several runs.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated paradigms, overriding the subcommand's own.
    #[arg(long)]
    paradigm: Option<String>,
    /// Loss name (xent, xent-A:B, edcf, ddcf); repeatable.
    #[arg(long = "loss")]
    losses: Vec<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    session_len: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Any other configuration key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct SupervisedArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Also save the classifier of the first seed and loss.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 0)]
    target_class: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    points: usize,
    /// Perturb the analytic gradient of the named case.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// A results.jsonl file.
    results: PathBuf,
    /// Output directory; defaults to the directory of the results file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn settings(args: &RunArgs, paradigm: Option<Paradigm>) -> Result<Settings> {
    let mut s = match &args.config {
        Some(path) => Settings::read(path).with_context(|| format!("reading {}", path.display()))?,
        None => Settings::default(),
    };
    if let Some(p) = paradigm {
        s.set("paradigm", p.name());
    }
    if let Some(p) = &args.paradigm {
        s.set("paradigm", p.as_str());
    }
    if !args.seeds.is_empty() {
        let seeds: Vec<String> = args.seeds.iter().map(u64::to_string).collect();
        s.set("seeds", seeds.join(","));
    }
    if !args.losses.is_empty() {
        s.set("loss", args.losses.join(","));
    }
    if let Some(v) = &args.out {
        s.set("out", v.display().to_string());
    }
    for (key, value) in [
        ("jobs", args.jobs.map(|v| v.to_string())),
        ("lambda", args.lambda.map(|v| v.to_string())),
        ("budget", args.budget.map(|v| v.to_string())),
        ("session_len", args.session_len.map(|v| v.to_string())),
        ("bootstrap", args.bootstrap.map(|v| v.to_string())),
    ] {
        if let Some(value) = value {
            s.set(key, value);
        }
    }
    for kv in &args.sets {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        s.set(k.trim(), v.trim());
    }
    Ok(s)
}

fn load(args: &RunArgs, paradigm: Option<Paradigm>) -> Result<ExperimentConfig> {
    Ok(parse_config(&settings(args, paradigm)?)?)
}

fn run_grid(cfg: &ExperimentConfig) -> Result<bool> {
    let outcome = run_matrix(cfg)?;
    for row in &outcome.summary {
        println!(
            "{:<11} {:<10} runs={} dcf={:.4}±{:.4} fnr={:.4} fpr={:.4} labels={:.1}",
            row.paradigm,
            row.loss,
            row.runs,
            row.dcf_mean,
            row.dcf_std,
            row.fnr_mean,
            row.fpr_mean,
            row.labels_used_mean
        );
    }
    for f in &outcome.failures {
        eprintln!(
            "run failed: {} {} seed {}: {}",
            f.paradigm.name(),
            f.loss,
            f.seed,
            f.message
        );
    }
    println!("results written to {}", cfg.out_dir.display());
    Ok(outcome.failures.is_empty())
}

fn synth(args: &RunArgs) -> Result<bool> {
    let cfg = load(args, None)?;
    let DataSource::Synthetic(drift) = &cfg.source else {
        bail!("synth needs a synthetic source, not a manifest");
    };
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    for &seed in &cfg.seeds {
        let mut drift = drift.clone();
        drift.seed = drift.seed.wrapping_add(seed);
        let envs = generate_synthetic_stream(&drift)?;
        let samples: Vec<_> = envs.into_iter().flat_map(|e| e.samples).collect();
        let stem = if cfg.seeds.len() == 1 {
            "synth".to_string()
        } else {
            format!("synth-{seed}")
        };
        let manifest = cfg.out_dir.join(format!("{stem}.jsonl"));
        let features = cfg.out_dir.join(format!("{stem}.oalf"));
        save_dataset(&samples, &manifest, &features)?;
        println!(
            "{} samples -> {} + {}",
            samples.len(),
            manifest.display(),
            features.display()
        );
    }
    Ok(true)
}

fn supervised(args: &SupervisedArgs) -> Result<bool> {
    let cfg = load(&args.run, Some(Paradigm::Supervised))?;
    let ok = run_grid(&cfg)?;
    if let Some(path) = &args.checkpoint {
        let seed = cfg.seeds[0];
        let data = prepare_data(&cfg, seed)?;
        let engine = EngineConfig {
            loss: cfg.losses[0],
            ..cfg.engine.clone()
        };
        let (_, params) = run_supervised(&data.train, &data.val, &data.test, &engine, seed)?;
        let mut bytes = Vec::new();
        write_checkpoint(&params, seed, &mut bytes)?;
        write_atomic(path, &bytes)?;
        println!("checkpoint written to {}", path.display());
    }
    Ok(ok)
}

fn eval(args: &EvalArgs) -> Result<bool> {
    let bytes = fs::read(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let (params, _) = read_checkpoint(&bytes)?;
    let samples = load_manifest(&args.manifest, &args.features)?;
    if args.target_class >= params.arch.num_classes {
        bail!(
            "target class {} outside the classifier's {} classes",
            args.target_class,
            params.arch.num_classes
        );
    }
    let x = stack_features(samples.iter().map(|s| &s.features), params.arch.input_dim)?;
    let pred = predict(&params, x.view())?;
    let scores: Vec<f64> = pred.posteriors.column(args.target_class).to_vec();
    let labels = samples
        .iter()
        .map(|s| {
            s.label
                .as_ref()
                .map(|l| l.has(args.target_class))
                .with_context(|| format!("sample `{}` has no label", s.id))
        })
        .collect::<Result<Vec<bool>>>()?;
    let rates = error_rates(&ConfusionCounts::from_scores(&scores, &labels));
    let auprc = auprc_of(&scores, &labels);
    println!(
        "samples={} dcf={:.4} fnr={:.4} fpr={:.4} auprc={}",
        samples.len(),
        rates.dcf(),
        rates.fnr,
        rates.fpr,
        auprc.map_or("undefined".into(), |a| format!("{a:.4}"))
    );
    Ok(true)
}

fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let report = run_gradcheck(&GradcheckOptions {
        points: args.points,
        seed: args.seed,
        corrupt: args.corrupt.clone(),
        ..Default::default()
    });
    for case in &report.cases {
        println!(
            "{} {:<28} max_rel_err={:.3e} checked={} skipped_kinks={}",
            if case.passed { "PASS" } else { "FAIL" },
            case.name,
            case.max_rel_err,
            case.checked,
            case.skipped_kinks
        );
        for t in &case.per_tensor {
            println!("       {:<20} {:.3e}", t.tensor, t.max_rel_err);
        }
    }
    if !report.passed() {
        eprintln!("gradient check failed for: {}", report.failures().join(", "));
    }
    Ok(report.passed())
}

fn summarize(args: &SummarizeArgs) -> Result<bool> {
    let reports = read_reports(&args.results)?;
    let out = args
        .out
        .clone()
        .or_else(|| args.results.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let rows = write_outputs(&out, &reports)?;
    info!("{} reports summarized into {} rows", reports.len(), rows.len());
    print!("{}", fs::read_to_string(out.join(SUMMARY_FILE))?);
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OAL_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Supervised(a) => supervised(a),
        Command::Al(a) => load(a, Some(Paradigm::Al)).and_then(|c| run_grid(&c)),
        Command::Oal(a) => load(a, Some(Paradigm::Oal)).and_then(|c| run_grid(&c)),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Summarize(a) => summarize(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
