//! Central finite-difference verification of every analytic gradient.
//!
//! Each case is evaluated at several seeded random points. Coordinates where
//! the perturbation crosses a non-differentiable point (a ReLU switching, a
//! contrastive hinge toggling, a cross-entropy clamp engaging) are skipped.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::losses::{classification_loss, contrastive_batch, sigmoid, DargmaxInput, LossConfig, XENT_EPS};
use crate::network::{batch_objective, batch_value, forward, init_classifier, pair_up, ArchConfig, ClassifierParams};
use crate::rng;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub points: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
    /// Test hook: perturb the analytic gradient of the named case.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            points: 10,
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 20_240_901,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorError {
    pub tensor: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub points: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    pub per_tensor: Vec<TensorError>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub cases: Vec<CaseReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.cases
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Classification loss configurations covered by the check.
pub fn loss_cases() -> Vec<(String, LossConfig)> {
    let logit_ddcf = LossConfig {
        dargmax_input: DargmaxInput::Logit,
        ..LossConfig::ddcf(1.0)
    };
    vec![
        ("xent-1:1".into(), LossConfig::xent(1.0, 1.0)),
        ("xent-4:1".into(), LossConfig::xent(4.0, 1.0)),
        ("edcf".into(), LossConfig::edcf()),
        ("ddcf-lambda1".into(), LossConfig::ddcf(1.0)),
        ("ddcf-lambda100".into(), LossConfig::ddcf(100.0)),
        ("ddcf-logit-lambda1".into(), logit_ddcf),
    ]
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

struct Accumulator {
    name: String,
    per_tensor: Vec<TensorError>,
    checked: usize,
    skipped: usize,
}

impl Accumulator {
    fn new(name: &str, tensors: &[String]) -> Self {
        Accumulator {
            name: name.into(),
            per_tensor: tensors
                .iter()
                .map(|t| TensorError {
                    tensor: t.clone(),
                    max_rel_err: 0.0,
                })
                .collect(),
            checked: 0,
            skipped: 0,
        }
    }

    fn record(&mut self, tensor: usize, err: f64) {
        self.checked += 1;
        let slot = &mut self.per_tensor[tensor].max_rel_err;
        *slot = slot.max(err);
    }

    fn finish(self, points: usize, tolerance: f64) -> CaseReport {
        let max_rel_err = self.per_tensor.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
        CaseReport {
            name: self.name,
            points,
            checked: self.checked,
            skipped_kinks: self.skipped,
            max_rel_err,
            per_tensor: self.per_tensor,
            passed: self.checked > 0 && max_rel_err <= tolerance,
        }
    }
}

fn corruption(opts: &GradcheckOptions, name: &str) -> f64 {
    if opts.corrupt.as_deref() == Some(name) {
        1e-2
    } else {
        0.0
    }
}

fn random_labels(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_bool(0.5) as u8 as f64)
}

fn clamp_state(logits: &Array2<f64>) -> Vec<bool> {
    logits
        .iter()
        .map(|&z| {
            let p = sigmoid(z);
            p <= XENT_EPS || p >= 1.0 - XENT_EPS
        })
        .collect()
}

/// Gradient of a classification loss with respect to the logits.
fn check_classification(name: &str, cfg: &LossConfig, opts: &GradcheckOptions) -> CaseReport {
    let mut rng = rng::stream(rng::mix(opts.seed, 11), rng::streams::INIT);
    let mut acc = Accumulator::new(name, &["logits".into()]);
    let bump = corruption(opts, name);
    for _ in 0..opts.points {
        let (n, c) = (7, 2);
        let logits = Array2::from_shape_fn((n, c), |_| rng.random_range(-3.0..3.0));
        let labels = random_labels(&mut rng, n, c);
        let mut analytic = classification_loss(logits.view(), labels.view(), cfg).grad;
        analytic[[0, 0]] += bump;
        let base_clamp = clamp_state(&logits);
        for idx in 0..logits.len() {
            let (i, j) = (idx / c, idx % c);
            let eval = |delta: f64| {
                let mut z = logits.clone();
                z[[i, j]] += delta;
                (classification_loss(z.view(), labels.view(), cfg).value, clamp_state(&z))
            };
            let (plus, cp) = eval(opts.step);
            let (minus, cm) = eval(-opts.step);
            if cp != base_clamp || cm != base_clamp {
                acc.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            acc.record(0, rel_err(analytic[[i, j]], numeric, opts.floor));
        }
    }
    acc.finish(opts.points, opts.tolerance)
}

fn hinge_state(emb: ArrayView2<f64>, pairs: &[(usize, usize, bool)], margin: f64) -> Vec<bool> {
    pairs
        .iter()
        .map(|&(i, j, _)| {
            let d = (&emb.row(i) - &emb.row(j)).mapv(|v| v * v).sum().sqrt();
            d < margin
        })
        .collect()
}

fn pairs_clear_of_kinks(emb: ArrayView2<f64>, pairs: &[(usize, usize, bool)], margin: f64) -> bool {
    pairs.iter().all(|&(i, j, similar)| {
        let d = (&emb.row(i) - &emb.row(j)).mapv(|v| v * v).sum().sqrt();
        similar || ((d - margin).abs() > 1e-2 && d > 1e-2)
    })
}

/// Gradient of the contrastive loss with respect to the embeddings.
fn check_contrastive(opts: &GradcheckOptions) -> CaseReport {
    let name = "contrastive";
    let margin = 1.0;
    let mut rng = rng::stream(rng::mix(opts.seed, 12), rng::streams::INIT);
    let mut acc = Accumulator::new(name, &["embeddings".into()]);
    let bump = corruption(opts, name);
    let mut done = 0;
    while done < opts.points {
        let (n, e) = (8, 3);
        let emb = Array2::from_shape_fn((n, e), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            0.4 * v
        });
        let labels = random_labels(&mut rng, n, 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let pairs = pair_up(&order, labels.view(), 0);
        if !pairs_clear_of_kinks(emb.view(), &pairs, margin) {
            continue;
        }
        done += 1;
        let mut analytic = contrastive_batch(emb.view(), &pairs, margin).expect("pairs").grad;
        analytic[[0, 0]] += bump;
        let base = hinge_state(emb.view(), &pairs, margin);
        for idx in 0..emb.len() {
            let (i, j) = (idx / e, idx % e);
            let eval = |delta: f64| {
                let mut x = emb.clone();
                x[[i, j]] += delta;
                let v = contrastive_batch(x.view(), &pairs, margin).expect("pairs").value;
                (v, hinge_state(x.view(), &pairs, margin))
            };
            let (plus, hp) = eval(opts.step);
            let (minus, hm) = eval(-opts.step);
            if hp != base || hm != base {
                acc.skipped += 1;
                continue;
            }
            acc.record(
                0,
                rel_err(analytic[[i, j]], (plus - minus) / (2.0 * opts.step), opts.floor),
            );
        }
    }
    acc.finish(opts.points, opts.tolerance)
}

fn tensor_names(params: &ClassifierParams) -> Vec<String> {
    let last = params.layers() - 1;
    (0..params.layers())
        .flat_map(|l| {
            if l == last {
                ["W_head".to_string(), "b_head".to_string()]
            } else {
                [format!("W{l}"), format!("b{l}")]
            }
        })
        .collect()
}

/// Every non-differentiable switch a parameter perturbation could flip.
fn network_kinks(params: &ClassifierParams, x: &Array2<f64>, pairs: &[(usize, usize, bool)], margin: f64) -> Vec<bool> {
    let fwd = forward(params, x.view()).expect("finite inputs");
    let mut state: Vec<bool> = fwd.pre.iter().flat_map(|z| z.iter().map(|&v| v > 0.0)).collect();
    state.extend(hinge_state(fwd.embeddings().view(), pairs, margin));
    state.extend(clamp_state(&fwd.logits));
    state
}

/// Gradient of the combined network objective with respect to every parameter.
fn check_network(name: &str, loss: &LossConfig, opts: &GradcheckOptions) -> CaseReport {
    let arch = ArchConfig::new(4, vec![6, 5], 2).expect("static architecture");
    let mut rng = rng::stream(rng::mix(opts.seed, 13), rng::streams::INIT);
    let names = tensor_names(&ClassifierParams::zeros(&arch));
    let mut acc = Accumulator::new(name, &names);
    let bump = corruption(opts, name);
    let mut done = 0;
    while done < opts.points {
        let mut params = init_classifier(&arch, rng.random()).expect("valid");
        for t in params.tensors.iter_mut() {
            t.mapv_inplace(|v| {
                let n: f64 = StandardNormal.sample(&mut rng);
                v + 0.1 * n
            });
        }
        let n = 8;
        let x = Array2::from_shape_fn((n, arch.input_dim), |_| StandardNormal.sample(&mut rng));
        let y = random_labels(&mut rng, n, arch.num_classes);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let pairs = pair_up(&order, y.view(), 0);
        let fwd = forward(&params, x.view()).expect("finite");
        if !pairs_clear_of_kinks(fwd.embeddings().view(), &pairs, loss.margin) {
            continue;
        }
        done += 1;
        let mut analytic = batch_objective(&params, x.view(), y.view(), &pairs, loss)
            .expect("finite")
            .grads;
        analytic[0][[0, 0]] += bump;
        let base = network_kinks(&params, &x, &pairs, loss.margin);
        for (t, grad) in analytic.iter().enumerate() {
            for idx in 0..grad.len() {
                let (i, j) = (idx / grad.ncols(), idx % grad.ncols());
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.tensors[t][[i, j]] += delta;
                    let v = batch_value(&p, x.view(), y.view(), &pairs, loss).expect("finite");
                    (v, network_kinks(&p, &x, &pairs, loss.margin))
                };
                let (plus, kp) = eval(opts.step);
                let (minus, km) = eval(-opts.step);
                if kp != base || km != base {
                    acc.skipped += 1;
                    continue;
                }
                acc.record(t, rel_err(grad[[i, j]], (plus - minus) / (2.0 * opts.step), opts.floor));
            }
        }
    }
    acc.finish(opts.points, opts.tolerance)
}

/// Runs every case: each classification loss on logits, the contrastive
/// loss on embeddings, and the combined objective through the network.
pub fn run_gradcheck(opts: &GradcheckOptions) -> GradcheckReport {
    let mut cases = Vec::new();
    for (name, cfg) in loss_cases() {
        cases.push(check_classification(&name, &cfg, opts));
    }
    cases.push(check_contrastive(opts));
    for (name, cfg) in loss_cases() {
        cases.push(check_network(&format!("combined/{name}"), &cfg, opts));
    }
    GradcheckReport {
        tolerance: opts.tolerance,
        cases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_gradient_is_named() {
        let opts = GradcheckOptions {
            points: 2,
            corrupt: Some("edcf".into()),
            ..Default::default()
        };
        let report = run_gradcheck(&opts);
        assert_eq!(report.failures(), vec!["edcf"]);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(rel_err(0.0, 0.0, 1e-6), 0.0);
        assert!((rel_err(1e-9, 2e-9, 1e-6) - 1e-3).abs() < 1e-12);
        assert!((rel_err(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-12);
    }
}
