//! Classification losses (weighted cross-entropy, expected DCF,
//! differentiable DCF) and the pairwise contrastive loss, each with its exact
//! gradient.
//!
//! The scalar losses operate on posteriors and return the gradient with
//! respect to those posteriors. [`classification_loss`] lifts them to a
//! matrix of per-class logits and chains through the sigmoid.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{OalError, Result};
use crate::metrics::{DEFAULT_W_FN, DEFAULT_W_FP};

/// Posterior clamp for the logarithms in cross-entropy.
pub const XENT_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Xent,
    Edcf,
    Ddcf,
}

/// What the differentiable argmax is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DargmaxInput {
    /// Two-way softmax of `(λp, λ(1-p))`.
    Posterior,
    /// Two-way softmax of `(λz, 0)` on the raw logit.
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Cross-entropy weight ratio, target : non-target.
    pub ratio: (f64, f64),
    pub w_fn: f64,
    pub w_fp: f64,
    pub lambda: f64,
    pub margin: f64,
    pub dargmax_input: DargmaxInput,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Xent,
            ratio: (1.0, 1.0),
            w_fn: DEFAULT_W_FN,
            w_fp: DEFAULT_W_FP,
            lambda: 100.0,
            margin: 1.0,
            dargmax_input: DargmaxInput::Posterior,
        }
    }
}

impl LossConfig {
    pub fn xent(target: f64, non_target: f64) -> Self {
        LossConfig {
            kind: LossKind::Xent,
            ratio: (target, non_target),
            ..Default::default()
        }
    }

    pub fn edcf() -> Self {
        LossConfig {
            kind: LossKind::Edcf,
            ..Default::default()
        }
    }

    pub fn ddcf(lambda: f64) -> Self {
        LossConfig {
            kind: LossKind::Ddcf,
            lambda,
            ..Default::default()
        }
    }

    /// Parses `xent`, `xent-4:1`, `edcf`, `ddcf` into a config with defaults.
    pub fn from_name(name: &str) -> Result<Self> {
        let name = name.trim();
        match name {
            "edcf" => Ok(Self::edcf()),
            "ddcf" => Ok(Self::ddcf(100.0)),
            "xent" => Ok(Self::xent(1.0, 1.0)),
            _ => {
                let ratio = name
                    .strip_prefix("xent-")
                    .and_then(|r| r.split_once(':'))
                    .and_then(|(a, b)| Some((a.parse::<f64>().ok()?, b.parse::<f64>().ok()?)))
                    .ok_or_else(|| {
                        OalError::key("loss", format!("unknown loss `{name}` (xent, xent-A:B, edcf, ddcf)"))
                    })?;
                let cfg = Self::xent(ratio.0, ratio.1);
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    /// Stable label used in reports.
    pub fn name(&self) -> String {
        match self.kind {
            LossKind::Xent => format!("xent-{}:{}", self.ratio.0, self.ratio.1),
            LossKind::Edcf => "edcf".into(),
            LossKind::Ddcf => "ddcf".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ((self.w_fn + self.w_fp) - 1.0).abs() > 1e-12 {
            return Err(OalError::key("w_fn", "w_fn + w_fp must equal 1"));
        }
        if self.w_fn < 0.0 || self.w_fp < 0.0 {
            return Err(OalError::key("w_fn", "cost weights must be non-negative"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(OalError::key("lambda", "lambda must be positive"));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(OalError::key("margin", "margin must be positive"));
        }
        let (a, b) = self.ratio;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(OalError::key("ratio", "class weight ratio terms must be positive"));
        }
        Ok(())
    }

    /// Cross-entropy weights `(w+, w-)`, scaled so their mean is 1.
    pub fn xent_weights(&self) -> (f64, f64) {
        let (a, b) = self.ratio;
        let scale = 2.0 / (a + b);
        (a * scale, b * scale)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossFlags {
    /// A posterior hit the cross-entropy clamp.
    pub clamped: bool,
    /// A DCF rate had an empty denominator and contributed 0.
    pub degenerate: bool,
    /// The contrastive term had no pairs.
    pub no_pairs: bool,
}

impl LossFlags {
    pub fn merge(&mut self, other: LossFlags) {
        self.clamped |= other.clamped;
        self.degenerate |= other.degenerate;
        self.no_pairs |= other.no_pairs;
    }
}

/// A scalar loss and its gradient with respect to the per-sample input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
    pub flags: LossFlags,
}

fn check_batch(posteriors: &[f64], labels: &[bool]) {
    assert_eq!(posteriors.len(), labels.len(), "posteriors and labels must align");
    assert!(!posteriors.is_empty(), "loss batch must be non-empty");
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weighted binary cross-entropy, averaged over the batch.
pub fn xent_loss(posteriors: &[f64], labels: &[bool], weights: (f64, f64)) -> LossValue {
    check_batch(posteriors, labels);
    let n = posteriors.len() as f64;
    let (w_pos, w_neg) = weights;
    let mut flags = LossFlags::default();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(posteriors.len());
    for (&raw, &y) in posteriors.iter().zip(labels) {
        let p = raw.clamp(XENT_EPS, 1.0 - XENT_EPS);
        let clamped = p != raw;
        flags.clamped |= clamped;
        let g = if y {
            value -= w_pos * p.ln();
            -w_pos / p
        } else {
            value -= w_neg * (1.0 - p).ln();
            w_neg / (1.0 - p)
        };
        grad.push(if clamped { 0.0 } else { g / n });
    }
    LossValue {
        value: value / n,
        grad,
        flags,
    }
}

/// Expected DCF: miss and false-alarm rates with posteriors standing in for
/// hard decisions.
pub fn edcf_loss(posteriors: &[f64], labels: &[bool], w_fn: f64, w_fp: f64) -> LossValue {
    check_batch(posteriors, labels);
    let positives = labels.iter().filter(|&&y| y).count() as f64;
    let negatives = labels.len() as f64 - positives;
    let mut flags = LossFlags::default();

    let mut miss = 0.0;
    let mut false_alarm = 0.0;
    for (&p, &y) in posteriors.iter().zip(labels) {
        if y {
            miss += 1.0 - p;
        } else {
            false_alarm += p;
        }
    }
    let fnr = if positives > 0.0 {
        miss / positives
    } else {
        flags.degenerate = true;
        0.0
    };
    let fpr = if negatives > 0.0 {
        false_alarm / negatives
    } else {
        flags.degenerate = true;
        0.0
    };
    let grad = labels
        .iter()
        .map(|&y| {
            if y {
                if positives > 0.0 {
                    -w_fn / positives
                } else {
                    0.0
                }
            } else if negatives > 0.0 {
                w_fp / negatives
            } else {
                0.0
            }
        })
        .collect();
    LossValue {
        value: w_fn * fnr + w_fp * fpr,
        grad,
        flags,
    }
}

/// Target component of the two-way softmax over `(λp, λ(1-p))`.
pub fn dargmax_weight(p: f64, lambda: f64) -> f64 {
    sigmoid(lambda * (2.0 * p - 1.0))
}

fn dargmax_slope(p: f64, lambda: f64) -> f64 {
    let w = dargmax_weight(p, lambda);
    2.0 * lambda * w * (1.0 - w)
}

/// Differentiable DCF: expected DCF over differentiable-argmax weights.
pub fn ddcf_loss(posteriors: &[f64], labels: &[bool], lambda: f64, w_fn: f64, w_fp: f64) -> LossValue {
    check_batch(posteriors, labels);
    let weights: Vec<f64> = posteriors.iter().map(|&p| dargmax_weight(p, lambda)).collect();
    let mut out = edcf_loss(&weights, labels, w_fn, w_fp);
    for (g, &p) in out.grad.iter_mut().zip(posteriors) {
        *g *= dargmax_slope(p, lambda);
    }
    out
}

/// Contrastive loss of one pair and its gradients for both embeddings.
///
/// At `d = 0` with a dissimilar pair the hinge gradient has no direction and
/// is taken as zero.
pub fn contrastive_loss(e1: &[f64], e2: &[f64], similar: bool, margin: f64) -> (f64, Vec<f64>, Vec<f64>) {
    assert_eq!(e1.len(), e2.len(), "embeddings must share a dimension");
    let diff: Vec<f64> = e1.iter().zip(e2).map(|(a, b)| a - b).collect();
    let d = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (value, scale) = if similar {
        (d * d, 2.0)
    } else if d < margin && d > 0.0 {
        let gap = margin - d;
        (gap * gap, -2.0 * gap / d)
    } else if d < margin {
        (margin * margin, 0.0)
    } else {
        (0.0, 0.0)
    };
    let g1: Vec<f64> = diff.iter().map(|x| scale * x).collect();
    let g2: Vec<f64> = g1.iter().map(|x| -x).collect();
    (value, g1, g2)
}

/// A loss over a matrix input together with its gradient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorLoss {
    pub value: f64,
    pub grad: Array2<f64>,
    pub flags: LossFlags,
}

/// Mean contrastive loss over `(i, j, similar)` pairs of embedding rows.
/// `None` when there are no pairs.
pub fn contrastive_batch(
    embeddings: ArrayView2<f64>,
    pairs: &[(usize, usize, bool)],
    margin: f64,
) -> Option<TensorLoss> {
    if pairs.is_empty() {
        return None;
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut grad = Array2::zeros(embeddings.raw_dim());
    let mut value = 0.0;
    for &(i, j, similar) in pairs {
        let a = embeddings.row(i).to_vec();
        let b = embeddings.row(j).to_vec();
        let (v, g1, g2) = contrastive_loss(&a, &b, similar, margin);
        value += v;
        for (k, (x, y)) in g1.iter().zip(&g2).enumerate() {
            grad[[i, k]] += scale * x;
            grad[[j, k]] += scale * y;
        }
    }
    Some(TensorLoss {
        value: value * scale,
        grad,
        flags: LossFlags::default(),
    })
}

/// Applies the configured classification loss to each class column of a
/// logit matrix and averages over classes. The gradient is with respect to
/// the logits.
pub fn classification_loss(logits: ArrayView2<f64>, labels: ArrayView2<f64>, cfg: &LossConfig) -> TensorLoss {
    assert_eq!(logits.dim(), labels.dim(), "logits and labels must align");
    let (_, classes) = logits.dim();
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut value = 0.0;
    let mut flags = LossFlags::default();
    for c in 0..classes {
        let z: Vec<f64> = logits.column(c).to_vec();
        let y: Vec<bool> = labels.column(c).iter().map(|&v| v > 0.5).collect();
        let p: Vec<f64> = z.iter().map(|&z| sigmoid(z)).collect();
        let (out, dz): (LossValue, Vec<f64>) = match (cfg.kind, cfg.dargmax_input) {
            (LossKind::Ddcf, DargmaxInput::Logit) => {
                let w: Vec<f64> = z.iter().map(|&z| sigmoid(cfg.lambda * z)).collect();
                let out = edcf_loss(&w, &y, cfg.w_fn, cfg.w_fp);
                let dz = out
                    .grad
                    .iter()
                    .zip(&w)
                    .map(|(g, w)| g * cfg.lambda * w * (1.0 - w))
                    .collect();
                (out, dz)
            }
            (kind, _) => {
                let out = match kind {
                    LossKind::Xent => xent_loss(&p, &y, cfg.xent_weights()),
                    LossKind::Edcf => edcf_loss(&p, &y, cfg.w_fn, cfg.w_fp),
                    LossKind::Ddcf => ddcf_loss(&p, &y, cfg.lambda, cfg.w_fn, cfg.w_fp),
                };
                let dz = out.grad.iter().zip(&p).map(|(g, p)| g * p * (1.0 - p)).collect();
                (out, dz)
            }
        };
        value += out.value;
        flags.merge(out.flags);
        for (i, g) in dz.into_iter().enumerate() {
            grad[[i, c]] = g / classes as f64;
        }
    }
    TensorLoss {
        value: value / classes as f64,
        grad,
        flags,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub value: f64,
    pub grad_logits: Array2<f64>,
    pub grad_embeddings: Option<Array2<f64>>,
    pub flags: LossFlags,
}

/// Mean of the classification and contrastive losses; the classification
/// loss alone (flagged) when there is no contrastive term.
pub fn combined_loss(classification: TensorLoss, contrastive: Option<TensorLoss>) -> CombinedLoss {
    let mut flags = classification.flags;
    match contrastive {
        Some(con) => {
            flags.merge(con.flags);
            CombinedLoss {
                value: 0.5 * (classification.value + con.value),
                grad_logits: classification.grad * 0.5,
                grad_embeddings: Some(con.grad * 0.5),
                flags,
            }
        }
        None => {
            flags.no_pairs = true;
            CombinedLoss {
                value: classification.value,
                grad_logits: classification.grad,
                grad_embeddings: None,
                flags,
            }
        }
    }
}
