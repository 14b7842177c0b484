//! A feed-forward contrastive classifier: ReLU embedding layers followed by a
//! linear head with one sigmoid output per class.
//!
//! Training minimizes the mean of a classification loss and a pairwise
//! contrastive loss on the embeddings, with exact gradients and AdamW.

use std::io::Write;

use log::debug;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{FeatureVector, LabelVector};
use crate::error::{OalError, Result};
use crate::ingest::{decode_features_prefix, encode_features, FeatureMatrix};
use crate::losses::{classification_loss, combined_loss, contrastive_batch, sigmoid, LossConfig, LossFlags};
use crate::metrics::DECISION_THRESHOLD;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_dim: usize,
    /// Hidden layer widths; the last one is the embedding size.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

impl ArchConfig {
    pub const DEFAULT_HIDDEN: [usize; 2] = [256, 128];

    pub fn new(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Result<Self> {
        let arch = ArchConfig {
            input_dim,
            hidden,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn with_default_hidden(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(input_dim, Self::DEFAULT_HIDDEN.to_vec(), num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(OalError::key("hidden", "input and output dimensions must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(OalError::key(
                "hidden",
                "need at least one hidden layer, all widths positive",
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn embedding_dim(&self) -> usize {
        *self.hidden.last().expect("validated")
    }
}

/// Weights and biases, stored as `[W_0, b_0, W_1, b_1, ..., W_head, b_head]`.
/// Weights are `fan_in x fan_out`; biases are `1 x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub arch: ArchConfig,
    pub tensors: Vec<Array2<f64>>,
}

impl ClassifierParams {
    pub fn zeros(arch: &ArchConfig) -> Self {
        let tensors = arch
            .layer_shapes()
            .into_iter()
            .flat_map(|(i, o)| [Array2::zeros((i, o)), Array2::zeros((1, o))])
            .collect();
        ClassifierParams {
            arch: arch.clone(),
            tensors,
        }
    }

    pub fn layers(&self) -> usize {
        self.tensors.len() / 2
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.tensors[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Array2<f64> {
        &self.tensors[2 * layer + 1]
    }

    pub fn head_weight_mut(&mut self) -> &mut Array2<f64> {
        let i = self.tensors.len() - 2;
        &mut self.tensors[i]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_classifier(arch: &ArchConfig, seed: u64) -> Result<ClassifierParams> {
    arch.validate()?;
    let mut rng = rng::stream(seed, rng::streams::INIT);
    let mut params = ClassifierParams::zeros(arch);
    for (layer, (fan_in, fan_out)) in arch.layer_shapes().into_iter().enumerate() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        params.tensors[2 * layer].mapv_inplace(|_| rng.random_range(-bound..bound));
    }
    Ok(params)
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Pre-activations of each hidden layer.
    pub pre: Vec<Array2<f64>>,
    /// Layer inputs: the batch itself, then each hidden layer's output.
    pub acts: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub posteriors: Array2<f64>,
}

impl Forward {
    pub fn embeddings(&self) -> &Array2<f64> {
        self.acts.last().expect("at least the input")
    }
}

pub fn forward(params: &ClassifierParams, x: ArrayView2<f64>) -> Result<Forward> {
    if x.ncols() != params.arch.input_dim {
        return Err(OalError::InvalidInput(format!(
            "batch has {} features, network expects {}",
            x.ncols(),
            params.arch.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(OalError::InvalidInput("non-finite input feature".into()));
    }
    let hidden = params.layers() - 1;
    let mut pre = Vec::with_capacity(hidden);
    let mut acts = vec![x.to_owned()];
    for layer in 0..hidden {
        let z = acts[layer].dot(params.weight(layer)) + params.bias(layer);
        acts.push(z.mapv(|v| v.max(0.0)));
        pre.push(z);
    }
    let logits = acts[hidden].dot(params.weight(hidden)) + params.bias(hidden);
    let posteriors = logits.mapv(sigmoid);
    Ok(Forward {
        pre,
        acts,
        logits,
        posteriors,
    })
}

/// Parameter gradients from gradients at the logits and (optionally) the
/// embeddings.
pub fn backward(
    params: &ClassifierParams,
    fwd: &Forward,
    grad_logits: &Array2<f64>,
    grad_embeddings: Option<&Array2<f64>>,
) -> Vec<Array2<f64>> {
    let layers = params.layers();
    let mut grads: Vec<Array2<f64>> = params.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect();

    let mut delta = grad_logits.clone();
    for layer in (0..layers).rev() {
        grads[2 * layer] = fwd.acts[layer].t().dot(&delta);
        grads[2 * layer + 1] = delta.sum_axis(Axis(0)).insert_axis(Axis(0));
        if layer == 0 {
            break;
        }
        let mut upstream = delta.dot(&params.weight(layer).t());
        if layer == layers - 1 {
            if let Some(g) = grad_embeddings {
                upstream += g;
            }
        }
        upstream.zip_mut_with(&fwd.pre[layer - 1], |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        delta = upstream;
    }
    grads
}

/// Contrastive pairs `(i, j, same_target)` for a batch.
pub type Pairs = Vec<(usize, usize, bool)>;

/// Pairs consecutive elements of `order`: `(order[0], order[1])`, ...
pub fn pair_up(order: &[usize], labels: ArrayView2<f64>, target_class: usize) -> Pairs {
    order
        .chunks_exact(2)
        .map(|c| {
            let same = (labels[[c[0], target_class]] > 0.5) == (labels[[c[1], target_class]] > 0.5);
            (c[0], c[1], same)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub value: f64,
    pub grads: Vec<Array2<f64>>,
    pub flags: LossFlags,
}

/// Total loss of a batch and its parameter gradients.
pub fn batch_objective(
    params: &ClassifierParams,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    pairs: &[(usize, usize, bool)],
    loss: &LossConfig,
) -> Result<Objective> {
    let fwd = forward(params, x)?;
    let cls = classification_loss(fwd.logits.view(), y, loss);
    let con = contrastive_batch(fwd.embeddings().view(), pairs, loss.margin);
    let total = combined_loss(cls, con);
    let grads = backward(params, &fwd, &total.grad_logits, total.grad_embeddings.as_ref());
    Ok(Objective {
        value: total.value,
        grads,
        flags: total.flags,
    })
}

/// Total loss of a batch without gradients.
pub fn batch_value(
    params: &ClassifierParams,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    pairs: &[(usize, usize, bool)],
    loss: &LossConfig,
) -> Result<f64> {
    let fwd = forward(params, x)?;
    let cls = classification_loss(fwd.logits.view(), y, loss);
    let con = contrastive_batch(fwd.embeddings().view(), pairs, loss.margin);
    Ok(combined_loss(cls, con).value)
}

/// AdamW state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ClassifierParams, lr: f64, weight_decay: f64) -> Self {
        let zeros = || params.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        OptimizerState {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// One update with decoupled weight decay.
    pub fn update(&mut self, params: &mut ClassifierParams, grads: &[Array2<f64>]) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((theta, g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            ndarray::Zip::from(theta)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|theta, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *theta -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *theta);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Minimum validation samples of each target category for early stopping.
    pub min_val_per_class: usize,
    /// Epochs run when the validation split is too small to monitor.
    pub fallback_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub target_class: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            validation_fraction: 0.2,
            min_val_per_class: 2,
            fallback_epochs: 30,
            lr: 1e-4,
            weight_decay: 1e-5,
            target_class: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(OalError::key("patience", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(OalError::key("validation_fraction", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(OalError::key("batch_size", "must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(OalError::key("lr", "must be non-negative"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(OalError::key("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Labeled feature rows in canonical (id-sorted) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl Dataset {
    pub fn new<'a>(rows: impl IntoIterator<Item = (&'a str, &'a FeatureVector, &'a LabelVector)>) -> Result<Self> {
        let mut rows: Vec<_> = rows.into_iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let n = rows.len();
        let dim = rows.first().map_or(0, |r| r.1.dim());
        let classes = rows.first().map_or(0, |r| r.2.num_classes());
        let mut x = Array2::zeros((n, dim));
        let mut y = Array2::zeros((n, classes));
        for (i, (id, f, l)) in rows.iter().enumerate() {
            if f.dim() != dim || l.num_classes() != classes {
                return Err(OalError::Record {
                    id: id.to_string(),
                    message: "inconsistent feature or label dimension".into(),
                });
            }
            x.row_mut(i).assign(&ndarray::aview1(f.values()));
            y.row_mut(i)
                .assign(&ndarray::Array1::from_iter(l.flags().iter().map(|&v| v as f64)));
        }
        Ok(Dataset {
            ids: rows.iter().map(|r| r.0.to_string()).collect(),
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            x: self.x.select(Axis(0), indices),
            y: self.y.select(Axis(0), indices),
        }
    }

    fn count_target(&self, class: usize) -> usize {
        self.y.column(class).iter().filter(|&&v| v > 0.5).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub early_stopping: bool,
    pub stopped_early: bool,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    /// Batches trained on the classification loss alone.
    pub unpaired_batches: usize,
    pub degenerate_batches: usize,
}

/// Trains on `data`, holding out a seeded validation split for early
/// stopping when it is large enough.
pub fn train(
    params: &ClassifierParams,
    data: &Dataset,
    cfg: &TrainConfig,
    loss: &LossConfig,
) -> Result<(ClassifierParams, TrainTrace)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(OalError::InvalidInput("cannot train on an empty labeled set".into()));
    }
    if cfg.validation_fraction == 0.0 {
        return train_with_validation(params, data, None, cfg.max_epochs, cfg, loss);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, rng::streams::SPLIT));
    let n_val = (cfg.validation_fraction * data.len() as f64).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let val = data.subset(&val_idx);
    let positives = if val.is_empty() {
        0
    } else {
        val.count_target(cfg.target_class)
    };
    let negatives = val.len() - positives;
    if train_idx.is_empty() || positives < cfg.min_val_per_class || negatives < cfg.min_val_per_class {
        debug!(
            "validation split of {} too small ({positives}+/{negatives}-); {} fixed epochs",
            val.len(),
            cfg.fallback_epochs
        );
        return train_with_validation(params, data, None, cfg.fallback_epochs, cfg, loss);
    }
    let train_set = data.subset(&train_idx);
    train_with_validation(params, &train_set, Some(&val), cfg.max_epochs, cfg, loss)
}

/// Mini-batch training for up to `epochs` epochs. With a validation set,
/// stops after `patience` epochs without improvement and returns the best
/// parameters seen.
pub fn train_with_validation(
    params: &ClassifierParams,
    data: &Dataset,
    val: Option<&Dataset>,
    epochs: usize,
    cfg: &TrainConfig,
    loss: &LossConfig,
) -> Result<(ClassifierParams, TrainTrace)> {
    cfg.validate()?;
    loss.validate()?;
    if data.is_empty() {
        return Err(OalError::InvalidInput("cannot train on an empty labeled set".into()));
    }
    if cfg.target_class >= data.y.ncols() {
        return Err(OalError::key("target_class", "target class outside the label vector"));
    }
    let mut current = params.clone();
    let mut optimizer = OptimizerState::new(&current, cfg.lr, cfg.weight_decay);
    let mut shuffle_rng = rng::stream(cfg.seed, rng::streams::SHUFFLE);
    let mut pair_rng = rng::stream(cfg.seed, rng::streams::PAIRS);
    let val = val.filter(|v| !v.is_empty());
    let val_pairs = val.map(|v| pair_up(&(0..v.len()).collect::<Vec<_>>(), v.y.view(), cfg.target_class));

    let mut trace = TrainTrace {
        early_stopping: val.is_some(),
        ..Default::default()
    };
    let mut best: Option<(f64, ClassifierParams)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.x.select(Axis(0), chunk);
            let y = data.y.select(Axis(0), chunk);
            let mut perm: Vec<usize> = (0..chunk.len()).collect();
            perm.shuffle(&mut pair_rng);
            let pairs = pair_up(&perm, y.view(), cfg.target_class);
            let obj = batch_objective(&current, x.view(), y.view(), &pairs, loss)?;
            trace.unpaired_batches += obj.flags.no_pairs as usize;
            trace.degenerate_batches += obj.flags.degenerate as usize;
            optimizer.update(&mut current, &obj.grads);
            epoch_loss += obj.value;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;

        let val_loss = match (val, &val_pairs) {
            (Some(v), Some(pairs)) => Some(batch_value(&current, v.x.view(), v.y.view(), pairs, loss)?),
            _ => None,
        };
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, current.clone()));
                trace.best_epoch = Some(epoch);
                trace.best_val_loss = Some(vl);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    trace.stopped_early = true;
                    break;
                }
            }
        }
    }
    if !current.is_finite() {
        return Err(OalError::InvalidInput(
            "training diverged to non-finite parameters".into(),
        ));
    }
    Ok((best.map_or(current, |(_, p)| p), trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Array2<f64>,
    pub posteriors: Array2<f64>,
    /// 1 where the posterior is at least 0.5.
    pub hard: Array2<u8>,
}

pub fn predict(params: &ClassifierParams, x: ArrayView2<f64>) -> Result<Prediction> {
    if x.nrows() == 0 {
        let c = params.arch.num_classes;
        return Ok(Prediction {
            logits: Array2::zeros((0, c)),
            posteriors: Array2::zeros((0, c)),
            hard: Array2::zeros((0, c)),
        });
    }
    let fwd = forward(params, x)?;
    let hard = fwd.posteriors.mapv(|p| (p >= DECISION_THRESHOLD) as u8);
    Ok(Prediction {
        logits: fwd.logits,
        posteriors: fwd.posteriors,
        hard,
    })
}

/// Stacks feature vectors into a batch matrix.
pub fn stack_features<'a>(features: impl IntoIterator<Item = &'a FeatureVector>, dim: usize) -> Result<Array2<f64>> {
    let rows: Vec<&FeatureVector> = features.into_iter().collect();
    let mut x = Array2::zeros((rows.len(), dim));
    for (i, f) in rows.iter().enumerate() {
        if f.dim() != dim {
            return Err(OalError::InvalidInput(format!(
                "feature vector of dimension {} where {dim} was expected",
                f.dim()
            )));
        }
        x.slice_mut(s![i, ..]).assign(&ndarray::aview1(f.values()));
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    arch: ArchConfig,
    init_seed: u64,
    /// `[rows, cols]` of each tensor in storage order.
    tensors: Vec<[u64; 2]>,
}

const CHECKPOINT_FORMAT: &str = "oal-checkpoint";

/// Serializes parameters as a JSON header line followed by one feature block
/// per tensor. Values are stored as f32.
pub fn write_checkpoint(params: &ClassifierParams, init_seed: u64, mut out: impl Write) -> std::io::Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        arch: params.arch.clone(),
        init_seed,
        tensors: params
            .tensors
            .iter()
            .map(|t| [t.nrows() as u64, t.ncols() as u64])
            .collect(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for t in &params.tensors {
        let block = FeatureMatrix::new(t.ncols(), t.iter().map(|&v| v as f32).collect())
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        out.write_all(&encode_features(&block))?;
    }
    Ok(())
}

/// Parses a checkpoint, returning the parameters and the init seed.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ClassifierParams, u64)> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| OalError::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| OalError::Checkpoint(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT || header.version != 1 {
        return Err(OalError::Checkpoint("unsupported format or version".into()));
    }
    header
        .arch
        .validate()
        .map_err(|e| OalError::Checkpoint(e.to_string()))?;
    let mut params = ClassifierParams::zeros(&header.arch);
    let expected: Vec<[u64; 2]> = params
        .tensors
        .iter()
        .map(|t| [t.nrows() as u64, t.ncols() as u64])
        .collect();
    if header.tensors != expected {
        return Err(OalError::Checkpoint(
            "tensor shapes do not match the architecture".into(),
        ));
    }
    let mut offset = newline + 1;
    for tensor in params.tensors.iter_mut() {
        let (block, used) =
            decode_features_prefix(&bytes[offset..]).map_err(|e| OalError::Checkpoint(e.to_string()))?;
        if block.dim() != tensor.ncols() || block.rows() != tensor.nrows() {
            return Err(OalError::Checkpoint("tensor block shape mismatch".into()));
        }
        if block.data().iter().any(|v| !v.is_finite()) {
            return Err(OalError::Checkpoint("non-finite parameter".into()));
        }
        for (dst, &src) in tensor.iter_mut().zip(block.data()) {
            *dst = src as f64;
        }
        offset += used;
    }
    if offset != bytes.len() {
        return Err(OalError::Checkpoint(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok((params, header.init_seed))
}
