//! Detection error rates, the detection cost function and precision-recall
//! summaries.

/// Default miss weight of the detection cost. Misses cost three times as
/// much as false alarms.
pub const DEFAULT_W_FN: f64 = 0.75;
pub const DEFAULT_W_FP: f64 = 0.25;

/// Posterior at or above which a class is predicted present.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Thresholds posteriors at 0.5 (inclusive) against binary labels.
    pub fn from_scores(posteriors: &[f64], labels: &[bool]) -> Self {
        assert_eq!(posteriors.len(), labels.len());
        let mut counts = ConfusionCounts::default();
        for (&p, &y) in posteriors.iter().zip(labels) {
            counts.record(p >= DECISION_THRESHOLD, y);
        }
        counts
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRates {
    pub fnr: f64,
    pub fpr: f64,
    /// No positives were evaluated; `fnr` is reported as 0.
    pub fnr_degenerate: bool,
    /// No negatives were evaluated; `fpr` is reported as 0.
    pub fpr_degenerate: bool,
}

impl ErrorRates {
    pub fn dcf(&self) -> f64 {
        dcf(self.fnr, self.fpr, DEFAULT_W_FN, DEFAULT_W_FP)
    }
}

pub fn error_rates(counts: &ConfusionCounts) -> ErrorRates {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (fnr, fnr_degenerate) = ratio(counts.fn_, counts.fn_ + counts.tp);
    let (fpr, fpr_degenerate) = ratio(counts.fp, counts.fp + counts.tn);
    ErrorRates {
        fnr,
        fpr,
        fnr_degenerate,
        fpr_degenerate,
    }
}

/// Weighted detection cost `w_fn * fnr + w_fp * fpr`.
pub fn dcf(fnr: f64, fpr: f64, w_fn: f64, w_fp: f64) -> f64 {
    w_fn * fnr + w_fp * fpr
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision-recall operating points, one per distinct score, from the
/// highest threshold down. `None` when there are no positive labels.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Option<Vec<PrPoint>> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(PrPoint {
            threshold,
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Some(curve)
}

/// Area under a precision-recall curve as average precision:
/// the sum of `(R_k - R_{k-1}) * P_k` with `R_0 = 0`.
pub fn auprc(curve: &[PrPoint]) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for point in curve {
        area += (point.recall - prev_recall) * point.precision;
        prev_recall = point.recall;
    }
    area
}

pub fn auprc_of(scores: &[f64], labels: &[bool]) -> Option<f64> {
    pr_curve(scores, labels).map(|c| auprc(&c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroAuprc {
    pub value: f64,
    pub skipped: usize,
}

/// Unweighted mean over classes with a defined AUPRC.
pub fn macro_auprc(per_class: &[Option<f64>]) -> Option<MacroAuprc> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return None;
    }
    Some(MacroAuprc {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        skipped: per_class.len() - defined.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn error_rates_from_counts() {
        let r = error_rates(&ConfusionCounts {
            tp: 3,
            fp: 1,
            tn: 5,
            fn_: 1,
        });
        assert_eq!(r.fnr, 0.25);
        assert!((r.fpr - 1.0 / 6.0).abs() < 1e-12);
        assert!(!r.fnr_degenerate && !r.fpr_degenerate);

        let perfect = error_rates(&ConfusionCounts {
            tp: 4,
            fp: 0,
            tn: 4,
            fn_: 0,
        });
        assert_eq!((perfect.fnr, perfect.fpr), (0.0, 0.0));

        let no_pos = error_rates(&ConfusionCounts {
            tp: 0,
            fp: 2,
            tn: 3,
            fn_: 0,
        });
        assert_eq!(no_pos.fnr, 0.0);
        assert!(no_pos.fnr_degenerate);
    }

    #[test]
    fn dcf_matches_reported_operating_points() {
        assert!((dcf(0.1661, 0.1871, 0.75, 0.25) - 0.1714).abs() < 6e-4);
        assert!((dcf(0.0884, 0.0219, 0.75, 0.25) - 0.0718).abs() < 6e-4);
        assert_eq!(dcf(0.0, 0.0, 0.75, 0.25), 0.0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = ConfusionCounts::from_scores(&[0.5, 0.4999], &[true, true]);
        assert_eq!((c.tp, c.fn_), (1, 1));
    }

    #[test]
    fn average_precision_hand_enumerated() {
        let ap = auprc_of(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(auprc_of(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
        assert_eq!(auprc_of(&[0.3, 0.2], &[false, false]), None);
    }

    #[test]
    fn tied_scores_form_one_operating_point() {
        let curve = pr_curve(&[0.5, 0.5, 0.5, 0.1], &[true, false, false, true]).unwrap();
        assert_eq!(curve.len(), 2);
        assert!((curve[0].precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(curve[0].recall, 0.5);
    }

    #[test]
    fn random_ranker_approaches_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prior = 0.3;
        let n = 10_000;
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < prior).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let empirical = labels.iter().filter(|&&y| y).count() as f64 / n as f64;
        let ap = auprc_of(&scores, &labels).unwrap();
        assert!((ap - empirical).abs() < 0.05, "ap {ap} vs prior {empirical}");
    }

    #[test]
    fn macro_average_skips_undefined() {
        assert_eq!(macro_auprc(&[Some(0.5); 8]).unwrap().value, 0.5);
        let two = macro_auprc(&[Some(1.0), Some(0.0416)]).unwrap();
        assert!((two.value - 0.5208).abs() < 1e-12);
        let mut classes = vec![Some(0.4); 7];
        classes.push(None);
        let m = macro_auprc(&classes).unwrap();
        assert_eq!(m.skipped, 1);
        assert!((m.value - 0.4).abs() < 1e-12);
        assert_eq!(macro_auprc(&[None, None]), None);
    }

    proptest! {
        #[test]
        fn dcf_is_identity_on_equal_rates(r in 0.0f64..=1.0) {
            prop_assert!((dcf(r, r, DEFAULT_W_FN, DEFAULT_W_FP) - r).abs() < 1e-15);
        }

        #[test]
        fn auprc_is_invariant_to_monotone_transforms(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..60)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let a = auprc_of(&scores, &labels);
            let b = auprc_of(&warped, &labels);
            prop_assert_eq!(a, b);
            if let Some(v) = a {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
