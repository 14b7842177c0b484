//! The three training paradigms.
//!
//! * [`run_oal`]: stream-based online active learning. Per environment, a
//!   classifier is bootstrapped on the earliest examples of each class, then
//!   each session is scored, a budget of labels is queried, the classifier is
//!   updated on everything labeled so far and the remaining samples of the
//!   session are predicted. Those predictions form the evaluation ledger.
//! * [`run_al`]: pool-based active learning against a fixed test set.
//! * [`run_supervised`]: full supervision with early stopping on a
//!   validation split.

use std::collections::{HashMap, HashSet};

use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_model::{build_bootstrap, build_sessions, AdaptationPool, Environment, LabelVector, Sample};
use crate::error::{OalError, Result};
use crate::ingest::{RunReport, SessionTrace};
use crate::losses::LossConfig;
use crate::metrics::{auprc_of, error_rates, macro_auprc, ConfusionCounts, ErrorRates, DECISION_THRESHOLD};
use crate::network::{
    init_classifier, predict, stack_features, train, train_with_validation, ArchConfig, ClassifierParams, Dataset,
    TrainConfig,
};
use crate::query::{energy_score, random_strategy, select_queries, single_target_energy, QueryStrategy};
use crate::rng;

/// Answers label queries from ground truth and counts what it releases.
#[derive(Debug, Clone, Default)]
pub struct OracleAnnotator {
    truth: HashMap<String, LabelVector>,
    released: HashSet<String>,
}

impl OracleAnnotator {
    pub fn new<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Self> {
        let mut truth = HashMap::new();
        for s in samples {
            let label = s.label.clone().ok_or_else(|| OalError::Record {
                id: s.id.clone(),
                message: "the oracle needs a ground-truth label".into(),
            })?;
            if truth.insert(s.id.clone(), label).is_some() {
                return Err(OalError::DuplicateId(s.id.clone()));
            }
        }
        Ok(OracleAnnotator {
            truth,
            released: HashSet::new(),
        })
    }

    /// Releases the label of `id`. Each sample is counted once.
    pub fn query(&mut self, id: &str) -> Result<LabelVector> {
        let label = self
            .truth
            .get(id)
            .cloned()
            .ok_or_else(|| OalError::InvalidInput(format!("oracle has no label for `{id}`")))?;
        self.released.insert(id.to_string());
        Ok(label)
    }

    /// Ground truth for scoring; does not count as an annotation.
    pub fn reference(&self, id: &str) -> Option<&LabelVector> {
        self.truth.get(id)
    }

    pub fn is_released(&self, id: &str) -> bool {
        self.released.contains(id)
    }

    pub fn count(&self) -> u64 {
        self.released.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub strategy: QueryStrategy,
    pub temperature: f64,
    pub session_len: usize,
    pub budget: usize,
    pub bootstrap: usize,
    pub target_class: usize,
    /// Re-initialize before every update instead of fine-tuning.
    pub retrain_from_scratch: bool,
    /// One classifier and pool across all environments.
    pub shared_model: bool,
    pub al_steps: usize,
    pub al_budget: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            hidden: ArchConfig::DEFAULT_HIDDEN.to_vec(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            strategy: QueryStrategy::NegativeEnergy,
            temperature: 1.0,
            session_len: 30,
            budget: 5,
            bootstrap: 8,
            target_class: 0,
            retrain_from_scratch: false,
            shared_model: false,
            al_steps: 20,
            al_budget: 50,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.loss.validate()?;
        if self.session_len == 0 {
            return Err(OalError::key("session_len", "must be at least 1"));
        }
        if self.budget == 0 {
            return Err(OalError::key("budget", "must be at least 1"));
        }
        if self.bootstrap == 0 || !self.bootstrap.is_multiple_of(2) {
            return Err(OalError::key("bootstrap", "must be an even positive integer"));
        }
        if self.al_budget == 0 {
            return Err(OalError::key("al_budget", "must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(OalError::key("temperature", "must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(OalError::key("hidden", "need at least one positive hidden width"));
        }
        Ok(())
    }

    fn arch(&self, input_dim: usize, num_classes: usize) -> Result<ArchConfig> {
        ArchConfig::new(input_dim, self.hidden.clone(), num_classes)
    }
}

/// Accumulates hard decisions and scores for the target class.
#[derive(Debug, Clone, Default)]
struct Ledger {
    scores: Vec<f64>,
    labels: Vec<bool>,
    counts: ConfusionCounts,
}

impl Ledger {
    fn push(&mut self, score: f64, label: bool) {
        self.scores.push(score);
        self.labels.push(label);
        self.counts.record(score >= DECISION_THRESHOLD, label);
    }

    fn rates(&self) -> ErrorRates {
        error_rates(&self.counts)
    }
}

/// Per-session record of what the classifier had seen when it predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionAudit {
    pub env: String,
    pub session: usize,
    /// Labeled ids the classifier was trained on before predicting.
    pub trained_on: Vec<String>,
    pub predicted: Vec<String>,
    pub queried: Vec<String>,
}

fn scores_for(cfg: &EngineConfig, params: &ClassifierParams, x: &Array2<f64>) -> Result<Vec<f64>> {
    let pred = predict(params, x.view())?;
    Ok(pred
        .logits
        .rows()
        .into_iter()
        .map(|z| {
            if z.len() == 1 {
                single_target_energy(z[0], cfg.temperature)
            } else {
                energy_score(&z.to_vec(), cfg.temperature)
            }
        })
        .collect())
}

fn choose(
    cfg: &EngineConfig,
    params: &ClassifierParams,
    candidates: &[&Sample],
    budget: usize,
    labeled: &HashSet<String>,
    seed: u64,
) -> Result<Vec<String>> {
    let ids: Vec<&str> = candidates.iter().map(|s| s.id.as_str()).collect();
    match cfg.strategy {
        QueryStrategy::NegativeEnergy => {
            let x = stack_features(candidates.iter().map(|s| &s.features), params.arch.input_dim)?;
            let scores = scores_for(cfg, params, &x)?;
            Ok(select_queries(&ids, &scores, budget, labeled))
        }
        QueryStrategy::Random => {
            let open: Vec<&str> = ids.into_iter().filter(|id| !labeled.contains(*id)).collect();
            Ok(random_strategy(&open, budget, seed))
        }
    }
}

fn pool_dataset(pool: &AdaptationPool) -> Result<Dataset> {
    Dataset::new(pool.entries().iter().map(|(s, l)| (s.id.as_str(), &s.features, l)))
}

struct Updater<'a> {
    cfg: &'a EngineConfig,
    seed: u64,
    updates: u64,
}

impl Updater<'_> {
    fn update(
        &mut self,
        current: &ClassifierParams,
        init: &ClassifierParams,
        pool: &AdaptationPool,
    ) -> Result<ClassifierParams> {
        let data = pool_dataset(pool)?;
        let start = if self.cfg.retrain_from_scratch { init } else { current };
        let train_cfg = TrainConfig {
            seed: rng::mix(self.seed, 1_000 + self.updates),
            target_class: self.cfg.target_class,
            ..self.cfg.train.clone()
        };
        self.updates += 1;
        Ok(train(start, &data, &train_cfg, &self.cfg.loss)?.0)
    }
}

fn shape_of(samples: &[&Sample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| OalError::InvalidInput("no samples".into()))?;
    let classes = first
        .label
        .as_ref()
        .map(|l| l.num_classes())
        .ok_or_else(|| OalError::Record {
            id: first.id.clone(),
            message: "missing ground-truth label".into(),
        })?;
    Ok((first.features.dim(), classes))
}

fn base_report(paradigm: &str, cfg: &EngineConfig, seed: u64) -> RunReport {
    RunReport {
        run_id: format!("{paradigm}-{}-{seed}", cfg.loss.name()),
        paradigm: paradigm.into(),
        loss: cfg.loss.name(),
        seed,
        dcf: 0.0,
        fnr: 0.0,
        fpr: 0.0,
        auprc: None,
        macro_auprc: None,
        labels_used: 0,
        labels_bootstrap: 0,
        labels_queried: 0,
        samples_to_start: 0,
        evaluated: 0,
        strategy: cfg.strategy.name().into(),
        flags: Vec::new(),
        per_session: Vec::new(),
    }
}

fn fill_metrics(report: &mut RunReport, ledger: &Ledger) {
    let rates = ledger.rates();
    report.fnr = rates.fnr;
    report.fpr = rates.fpr;
    report.dcf = rates.dcf();
    report.auprc = auprc_of(&ledger.scores, &ledger.labels);
    report.evaluated = ledger.scores.len() as u64;
    if rates.fnr_degenerate {
        report.flags.push("fnr_degenerate".into());
    }
    if rates.fpr_degenerate {
        report.flags.push("fpr_degenerate".into());
    }
}

/// Online active learning over the given environments.
pub fn run_oal(environments: &[Environment], cfg: &EngineConfig, seed: u64) -> Result<RunReport> {
    run_oal_audited(environments, cfg, seed, None)
}

pub fn run_oal_audited(
    environments: &[Environment],
    cfg: &EngineConfig,
    seed: u64,
    mut audit: Option<&mut Vec<SessionAudit>>,
) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = base_report("oal", cfg, seed);
    report.samples_to_start = cfg.session_len as u64;
    let all: Vec<&Sample> = environments.iter().flat_map(|e| e.samples.iter()).collect();
    if all.is_empty() {
        report.flags.push("no_unlabeled_predictions".into());
        return Ok(report);
    }
    let mut oracle = OracleAnnotator::new(all.iter().copied())?;
    let (dim, classes) = shape_of(&all)?;
    let arch = cfg.arch(dim, classes)?;
    let mut updater = Updater { cfg, seed, updates: 0 };
    let mut ledger = Ledger::default();

    let shared_init = init_classifier(&arch, rng::mix(seed, 0))?;
    let mut shared: Option<(ClassifierParams, AdaptationPool)> = None;

    for (e, env) in environments.iter().enumerate() {
        let corpus = build_bootstrap(env, cfg.bootstrap, cfg.target_class)?;
        let sessions = build_sessions(env, cfg.session_len, &corpus);
        if sessions.is_empty() {
            warn!("environment `{}` has no sessions after bootstrap; skipped", env.env_id);
            report.flags.push(format!("skipped_env:{}", env.env_id));
            continue;
        }
        if corpus.shortfall {
            report.flags.push(format!("bootstrap_shortfall:{}", env.env_id));
        }
        let init = if cfg.shared_model {
            shared_init.clone()
        } else {
            init_classifier(&arch, rng::mix(seed, 1 + e as u64))?
        };
        let (mut params, mut pool) = match shared.take() {
            Some(state) if cfg.shared_model => state,
            _ => (init.clone(), AdaptationPool::new()),
        };

        for s in &corpus.samples {
            let label = oracle.query(&s.id)?;
            pool.add(s.clone(), label)?;
            report.labels_bootstrap += 1;
        }
        params = updater.update(&params, &init, &pool)?;

        for session in &sessions {
            let members: Vec<&Sample> = session.samples.iter().collect();
            let labeled: HashSet<String> = members
                .iter()
                .filter(|s| pool.contains(&s.id))
                .map(|s| s.id.clone())
                .collect();
            let query_seed = rng::mix(seed, (e as u64) << 32 | session.index as u64);
            let queried = choose(cfg, &params, &members, cfg.budget, &labeled, query_seed)?;
            for id in &queried {
                let label = oracle.query(id)?;
                let sample = members.iter().find(|s| &s.id == id).expect("selected from session");
                pool.add((*sample).clone(), label)?;
                report.labels_queried += 1;
            }
            params = updater.update(&params, &init, &pool)?;

            let unlabeled: Vec<&Sample> = members.iter().copied().filter(|s| !oracle.is_released(&s.id)).collect();
            if let Some(trail) = audit.as_deref_mut() {
                trail.push(SessionAudit {
                    env: env.env_id.clone(),
                    session: session.index,
                    trained_on: pool.entries().iter().map(|(s, _)| s.id.clone()).collect(),
                    predicted: unlabeled.iter().map(|s| s.id.clone()).collect(),
                    queried: queried.clone(),
                });
            }
            if !unlabeled.is_empty() {
                let x = stack_features(unlabeled.iter().map(|s| &s.features), dim)?;
                let pred = predict(&params, x.view())?;
                for (s, p) in unlabeled.iter().zip(pred.posteriors.column(cfg.target_class)) {
                    let truth = oracle.reference(&s.id).expect("oracle covers every sample");
                    ledger.push(*p, truth.has(cfg.target_class));
                }
            }
            report.per_session.push(SessionTrace {
                env: Some(env.env_id.clone()),
                session: session.index,
                queried_ids: queried,
                dcf_so_far: ledger.rates().dcf(),
            });
        }
        if cfg.shared_model {
            shared = Some((params, pool));
        }
        info!(
            "environment `{}` done, {} labels released so far",
            env.env_id,
            oracle.count()
        );
    }

    if ledger.scores.is_empty() {
        report.flags.push("no_unlabeled_predictions".into());
    }
    fill_metrics(&mut report, &ledger);
    report.labels_used = oracle.count();
    Ok(report)
}

fn evaluate_on(params: &ClassifierParams, test: &[Sample], target: usize) -> Result<(Ledger, Option<f64>)> {
    let x = stack_features(test.iter().map(|s| &s.features), params.arch.input_dim)?;
    let pred = predict(params, x.view())?;
    let mut ledger = Ledger::default();
    let mut per_class: Vec<(Vec<f64>, Vec<bool>)> = vec![Default::default(); params.arch.num_classes];
    for (i, s) in test.iter().enumerate() {
        let label = s.label.as_ref().ok_or_else(|| OalError::Record {
            id: s.id.clone(),
            message: "test samples need ground-truth labels".into(),
        })?;
        for (c, (scores, labels)) in per_class.iter_mut().enumerate() {
            scores.push(pred.posteriors[[i, c]]);
            labels.push(label.has(c));
        }
        ledger.push(pred.posteriors[[i, target]], label.has(target));
    }
    let macro_value = if per_class.len() > 1 {
        let each: Vec<Option<f64>> = per_class.iter().map(|(s, l)| auprc_of(s, l)).collect();
        macro_auprc(&each).map(|m| m.value)
    } else {
        None
    };
    Ok((ledger, macro_value))
}

/// Pool-based active learning with evaluation on a fixed test set.
pub fn run_al(pool: &[Sample], test: &[Sample], cfg: &EngineConfig, seed: u64) -> Result<RunReport> {
    cfg.validate()?;
    if pool.is_empty() || test.is_empty() {
        return Err(OalError::Config(
            "active learning needs a non-empty pool and test set".into(),
        ));
    }
    let pool_ids: HashSet<&str> = pool.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = test.iter().find(|s| pool_ids.contains(s.id.as_str())) {
        return Err(OalError::Config(format!(
            "sample `{}` is in both pool and test set",
            s.id
        )));
    }
    let mut report = base_report("al", cfg, seed);
    report.samples_to_start = (pool.len() + test.len()) as u64;
    let mut oracle = OracleAnnotator::new(pool)?;
    let refs: Vec<&Sample> = pool.iter().collect();
    let (dim, classes) = shape_of(&refs)?;
    let arch = cfg.arch(dim, classes)?;
    let init = init_classifier(&arch, rng::mix(seed, 0))?;
    let mut updater = Updater { cfg, seed, updates: 0 };

    // Class-balanced bootstrap drawn from a seeded shuffle of the pool.
    let mut shuffled: Vec<Sample> = pool.to_vec();
    shuffled.sort_by(|a, b| a.id.cmp(&b.id));
    shuffled.shuffle(&mut rng::stream(seed, rng::streams::BOOTSTRAP));
    let pseudo = Environment {
        env_id: "pool".into(),
        samples: shuffled,
    };
    let corpus = build_bootstrap(&pseudo, cfg.bootstrap, cfg.target_class)?;
    if corpus.shortfall {
        report.flags.push("bootstrap_shortfall:pool".into());
    }
    let mut labeled = AdaptationPool::new();
    for s in &corpus.samples {
        labeled.add(s.clone(), oracle.query(&s.id)?)?;
        report.labels_bootstrap += 1;
    }
    let mut params = updater.update(&init, &init, &labeled)?;

    let mut ordered: Vec<&Sample> = pool.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    for step in 0..cfg.al_steps {
        let remaining: Vec<&Sample> = ordered.iter().copied().filter(|s| !labeled.contains(&s.id)).collect();
        if remaining.is_empty() {
            warn!("pool exhausted after {step} steps");
            report.flags.push("pool_exhausted".into());
            break;
        }
        let queried = choose(
            cfg,
            &params,
            &remaining,
            cfg.al_budget,
            &HashSet::new(),
            rng::mix(seed, step as u64),
        )?;
        for id in &queried {
            let sample = remaining.iter().find(|s| &s.id == id).expect("selected from pool");
            labeled.add((*sample).clone(), oracle.query(id)?)?;
            report.labels_queried += 1;
        }
        params = updater.update(&params, &init, &labeled)?;
        let (ledger, _) = evaluate_on(&params, test, cfg.target_class)?;
        report.per_session.push(SessionTrace {
            env: None,
            session: step,
            queried_ids: queried,
            dcf_so_far: ledger.rates().dcf(),
        });
    }

    let (ledger, macro_value) = evaluate_on(&params, test, cfg.target_class)?;
    fill_metrics(&mut report, &ledger);
    report.macro_auprc = macro_value;
    report.labels_used = oracle.count();
    Ok(report)
}

/// Fully-supervised training; returns the report and the trained classifier.
pub fn run_supervised(
    train_set: &[Sample],
    val_set: &[Sample],
    test_set: &[Sample],
    cfg: &EngineConfig,
    seed: u64,
) -> Result<(RunReport, ClassifierParams)> {
    cfg.validate()?;
    for (name, split) in [("train", train_set), ("validation", val_set), ("test", test_set)] {
        if split.is_empty() {
            return Err(OalError::Config(format!("the {name} split is empty")));
        }
    }
    let mut seen = HashSet::new();
    for s in train_set.iter().chain(val_set).chain(test_set) {
        if !seen.insert(s.id.as_str()) {
            return Err(OalError::Config(format!(
                "sample `{}` appears in more than one split",
                s.id
            )));
        }
    }
    let mut report = base_report("supervised", cfg, seed);
    report.strategy = String::new();
    let refs: Vec<&Sample> = train_set.iter().collect();
    let (dim, classes) = shape_of(&refs)?;
    let arch = cfg.arch(dim, classes)?;
    let init = init_classifier(&arch, rng::mix(seed, 0))?;

    let to_dataset = |split: &[Sample]| -> Result<Dataset> {
        let rows = split
            .iter()
            .map(|s| {
                let l = s.label.as_ref().ok_or_else(|| OalError::Record {
                    id: s.id.clone(),
                    message: "supervised training needs labels".into(),
                })?;
                Ok((s.id.as_str(), &s.features, l))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(rows)
    };
    let train_data = to_dataset(train_set)?;
    let val_data = to_dataset(val_set)?;
    let train_cfg = TrainConfig {
        seed: rng::mix(seed, 1_000),
        target_class: cfg.target_class,
        ..cfg.train.clone()
    };
    let (params, trace) = train_with_validation(
        &init,
        &train_data,
        Some(&val_data),
        train_cfg.max_epochs,
        &train_cfg,
        &cfg.loss,
    )?;
    if trace.stopped_early {
        info!("early stopping at epoch {:?}", trace.best_epoch);
    }

    let (ledger, macro_value) = evaluate_on(&params, test_set, cfg.target_class)?;
    fill_metrics(&mut report, &ledger);
    report.macro_auprc = macro_value;
    report.labels_used = (train_set.len() + val_set.len()) as u64;
    report.labels_bootstrap = report.labels_used;
    report.samples_to_start = (train_set.len() + val_set.len() + test_set.len()) as u64;
    Ok((report, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_stream, DriftConfig};

    pub(crate) fn quick_config() -> EngineConfig {
        EngineConfig {
            hidden: vec![8, 4],
            train: TrainConfig {
                max_epochs: 10,
                fallback_epochs: 5,
                lr: 1e-2,
                batch_size: 32,
                ..Default::default()
            },
            loss: LossConfig::edcf(),
            al_steps: 3,
            al_budget: 10,
            ..Default::default()
        }
    }

    fn stream(envs: usize, sessions: usize, seed: u64) -> Vec<Environment> {
        generate_synthetic_stream(&DriftConfig {
            num_envs: envs,
            sessions_per_env: sessions,
            dim: 4,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_counts_each_release_once() {
        let envs = stream(1, 1, 0);
        let mut oracle = OracleAnnotator::new(&envs[0].samples).unwrap();
        let id = envs[0].samples[0].id.clone();
        oracle.query(&id).unwrap();
        oracle.query(&id).unwrap();
        assert_eq!(oracle.count(), 1);
        assert!(oracle.reference(&envs[0].samples[1].id).is_some());
        assert_eq!(oracle.count(), 1);
        assert!(oracle.query("missing").is_err());
    }

    #[test]
    fn label_accounting_identity() {
        // Sessions of 30 after removing 8 bootstrap samples from 98.
        let cfg = DriftConfig {
            num_envs: 2,
            sessions_per_env: 1,
            session_len: 98,
            dim: 4,
            seed: 3,
            ..Default::default()
        };
        let envs = generate_synthetic_stream(&cfg).unwrap();
        let report = run_oal(&envs, &quick_config(), 1).unwrap();
        assert_eq!(report.labels_used, 2 * 8 + 2 * 3 * 5);
        assert_eq!(report.labels_bootstrap, 16);
        assert_eq!(report.labels_queried, 30);
        assert_eq!(report.samples_to_start, 30);
        assert_eq!(report.per_session.len(), 6);
        assert_eq!(report.evaluated, 2 * 3 * 25);
    }

    #[test]
    fn budget_covering_sessions_leaves_nothing_to_evaluate() {
        let envs = stream(1, 2, 4);
        let cfg = EngineConfig {
            budget: 30,
            ..quick_config()
        };
        let report = run_oal(&envs, &cfg, 0).unwrap();
        assert_eq!(report.evaluated, 0);
        assert!(report.flags.iter().any(|f| f == "no_unlabeled_predictions"));
        assert_eq!(report.labels_used, 60);
    }

    #[test]
    fn environments_without_sessions_are_skipped() {
        let mut envs = stream(2, 1, 5);
        envs[1].samples.truncate(6);
        let report = run_oal(&envs, &quick_config(), 0).unwrap();
        assert!(report.flags.iter().any(|f| f.starts_with("skipped_env:")));
        assert_eq!(report.labels_bootstrap, 8);
    }

    #[test]
    fn no_leakage_and_chronology() {
        let envs = stream(2, 3, 6);
        let mut audit = Vec::new();
        let report = run_oal_audited(&envs, &quick_config(), 2, Some(&mut audit)).unwrap();
        let queried: HashSet<String> = report.per_session.iter().flat_map(|s| s.queried_ids.clone()).collect();
        for entry in &audit {
            let env = envs.iter().find(|e| e.env_id == entry.env).unwrap();
            let corpus = build_bootstrap(env, 8, 0).unwrap();
            let sessions = build_sessions(env, 30, &corpus);
            let boot = corpus.ids();
            let allowed: HashSet<&str> = sessions[..=entry.session]
                .iter()
                .flat_map(|s| s.samples.iter().map(|x| x.id.as_str()))
                .chain(boot.iter().copied())
                .collect();
            assert!(entry.trained_on.iter().all(|id| allowed.contains(id.as_str())));
            for id in &entry.predicted {
                assert!(!queried.contains(id) && !boot.contains(id.as_str()));
                assert!(!entry.trained_on.contains(id));
            }
        }
    }

    #[test]
    fn shared_model_mode_runs() {
        let envs = stream(2, 2, 7);
        let cfg = EngineConfig {
            shared_model: true,
            ..quick_config()
        };
        let report = run_oal(&envs, &cfg, 0).unwrap();
        assert_eq!(report.labels_used, 2 * 8 + 2 * 2 * 5);
    }

    #[test]
    fn random_strategy_and_scratch_retraining() {
        let envs = stream(1, 2, 8);
        let cfg = EngineConfig {
            strategy: QueryStrategy::Random,
            retrain_from_scratch: true,
            ..quick_config()
        };
        let a = run_oal(&envs, &cfg, 4).unwrap();
        assert_eq!(a, run_oal(&envs, &cfg, 4).unwrap());
        assert_eq!(a.strategy, "random");
    }

    fn split(envs: &[Environment]) -> (Vec<Sample>, Vec<Sample>, Vec<Sample>) {
        let all: Vec<Sample> = envs.iter().flat_map(|e| e.samples.clone()).collect();
        let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
        for (i, s) in all.into_iter().enumerate() {
            match i % 5 {
                0 => b.push(s),
                1 => c.push(s),
                _ => a.push(s),
            }
        }
        (a, b, c)
    }

    #[test]
    fn al_accounting_and_zero_steps() {
        let envs = stream(1, 4, 9);
        let (pool, _, test) = split(&envs);
        let report = run_al(&pool, &test, &quick_config(), 1).unwrap();
        assert_eq!(report.labels_used, 8 + 3 * 10);
        assert_eq!(report.per_session.len(), 3);
        let zero = EngineConfig {
            al_steps: 0,
            ..quick_config()
        };
        let boot_only = run_al(&pool, &test, &zero, 1).unwrap();
        assert_eq!(boot_only.labels_used, 8);
        assert!(boot_only.per_session.is_empty());
    }

    #[test]
    fn al_stops_when_pool_runs_dry() {
        let envs = stream(1, 1, 10);
        let (pool, _, test) = split(&envs);
        let cfg = EngineConfig {
            al_steps: 50,
            ..quick_config()
        };
        let report = run_al(&pool, &test, &cfg, 0).unwrap();
        assert!(report.flags.contains(&"pool_exhausted".to_string()));
        assert_eq!(report.labels_used, pool.len() as u64);
    }

    #[test]
    fn al_rejects_overlap() {
        let envs = stream(1, 1, 10);
        let all = envs[0].samples.clone();
        assert!(run_al(&all, &all[..3], &quick_config(), 0).is_err());
    }

    #[test]
    fn supervised_accounting_and_errors() {
        let envs = stream(2, 2, 11);
        let (train_set, val, test) = split(&envs);
        let (report, _) = run_supervised(&train_set, &val, &test, &quick_config(), 0).unwrap();
        assert_eq!(report.labels_used, (train_set.len() + val.len()) as u64);
        assert_eq!(report.samples_to_start, 120);
        assert!(run_supervised(&train_set, &[], &test, &quick_config(), 0).is_err());
    }

    #[test]
    fn supervised_overfits_separable_data() {
        let cfg = DriftConfig {
            num_envs: 1,
            sessions_per_env: 4,
            separation: 8.0,
            velocity: 0.0,
            amplitude: 0.0,
            dim: 4,
            seed: 1,
            ..Default::default()
        };
        let samples = generate_synthetic_stream(&cfg).unwrap().remove(0).samples;
        let mut engine = quick_config();
        engine.train.max_epochs = 60;
        engine.train.validation_fraction = 0.0;
        // Evaluate on the training data itself.
        let renamed = |tag: &str| -> Vec<Sample> {
            samples
                .iter()
                .map(|s| Sample {
                    id: format!("{tag}-{}", s.id),
                    ..s.clone()
                })
                .collect()
        };
        let (report, _) = run_supervised(&samples, &renamed("v"), &renamed("t"), &engine, 3).unwrap();
        assert!(report.dcf <= 0.02, "dcf {}", report.dcf);
    }

    #[test]
    fn multi_class_supervised_reports_macro_auprc() {
        let envs = stream(1, 2, 12);
        let widen = |s: &Sample, i: usize| Sample {
            label: Some(
                LabelVector::new(vec![s.label.as_ref().unwrap().has(0) as u8, i.is_multiple_of(3) as u8]).unwrap(),
            ),
            ..s.clone()
        };
        let all: Vec<Sample> = envs[0].samples.iter().enumerate().map(|(i, s)| widen(s, i)).collect();
        let (train_set, rest) = all.split_at(40);
        let (val, test) = rest.split_at(10);
        let (report, _) = run_supervised(train_set, val, test, &quick_config(), 0).unwrap();
        assert!(report.macro_auprc.is_some());
    }
}
