//! Query selection: free-energy uncertainty sampling and a random baseline.

use std::collections::HashSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{OalError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStrategy {
    #[serde(rename = "negenergy")]
    NegativeEnergy,
    Random,
}

impl QueryStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            QueryStrategy::NegativeEnergy => "negenergy",
            QueryStrategy::Random => "random",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim() {
            "negenergy" => Ok(QueryStrategy::NegativeEnergy),
            "random" => Ok(QueryStrategy::Random),
            other => Err(OalError::key("strategy", format!("unknown strategy `{other}`"))),
        }
    }
}

/// Labels the strategy may request per session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryBudget(usize);

impl QueryBudget {
    pub fn new(per_session: usize) -> Result<Self> {
        if per_session == 0 {
            return Err(OalError::key("budget", "query budget must be at least 1"));
        }
        Ok(QueryBudget(per_session))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Free energy `-T log sum_c exp(z_c / T)` of a logit vector.
///
/// Higher energy means lower model confidence.
pub fn energy_score(logits: &[f64], temperature: f64) -> f64 {
    assert!(!logits.is_empty());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let sum: f64 = logits.iter().map(|z| (z / temperature - max).exp()).sum();
    -temperature * (max + sum.ln())
}

/// Energy of a single-target classifier: the target logit against a zero
/// reference logit.
pub fn single_target_energy(logit: f64, temperature: f64) -> f64 {
    energy_score(&[logit, 0.0], temperature)
}

/// The `budget` highest-scoring candidates not already labeled, ties broken by
/// smaller id.
pub fn select_queries(ids: &[&str], scores: &[f64], budget: usize, labeled: &HashSet<String>) -> Vec<String> {
    assert_eq!(ids.len(), scores.len(), "scores must align with samples");
    let mut candidates: Vec<(usize, &str)> = ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !labeled.contains(**id))
        .map(|(i, &id)| (i, id))
        .collect();
    candidates.sort_by(|a, b| scores[b.0].total_cmp(&scores[a.0]).then_with(|| a.1.cmp(b.1)));
    candidates
        .into_iter()
        .take(budget)
        .map(|(_, id)| id.to_string())
        .collect()
}

/// Uniform selection without replacement, returned in session order.
pub fn random_strategy(ids: &[&str], budget: usize, seed: u64) -> Vec<String> {
    let mut rng = rng::stream(seed, rng::streams::QUERY);
    let take = budget.min(ids.len());
    let mut picked = index::sample(&mut rng, ids.len(), take).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| ids[i].to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i:03}")).collect()
    }

    #[test]
    fn energy_values() {
        assert!((energy_score(&[2.0, 0.0], 1.0) + (2f64.exp() + 1.0).ln()).abs() < 1e-12);
        assert!((energy_score(&[2.0, 0.0], 1.0) + 2.1269).abs() < 1e-4);
        assert!((energy_score(&[0.0, 0.0], 1.0) + std::f64::consts::LN_2).abs() < 1e-15);
        let shifted = energy_score(&[12.0, 10.0], 1.0);
        assert!((shifted - (energy_score(&[2.0, 0.0], 1.0) - 10.0)).abs() < 1e-12);
        assert!(energy_score(&[800.0, 0.0], 1.0).is_finite());
    }

    #[test]
    fn selects_top_budget() {
        let owned = ids(30);
        let refs: Vec<&str> = owned.iter().map(|s| s.as_str()).collect();
        let scores: Vec<f64> = (0..30).map(|i| ((i * 7) % 30) as f64).collect();
        let picked = select_queries(&refs, &scores, 5, &HashSet::new());
        assert_eq!(picked.len(), 5);
        let mut expected: Vec<usize> = (0..30).collect();
        expected.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let expected: Vec<String> = expected[..5].iter().map(|&i| owned[i].clone()).collect();
        assert_eq!(picked, expected);
    }

    #[test]
    fn small_sessions_and_ties() {
        let refs = ["c", "a", "b"];
        assert_eq!(select_queries(&refs, &[0.0, 1.0, 2.0], 5, &HashSet::new()).len(), 3);
        assert_eq!(select_queries(&["b", "a"], &[1.0, 1.0], 1, &HashSet::new()), vec!["a"]);
        let labeled: HashSet<String> = ["a".to_string()].into();
        assert_eq!(select_queries(&["b", "a"], &[1.0, 1.0], 1, &labeled), vec!["b"]);
    }

    #[test]
    fn random_is_seeded_and_uniform() {
        let owned = ids(4);
        let refs: Vec<&str> = owned.iter().map(|s| s.as_str()).collect();
        assert_eq!(random_strategy(&refs, 4, 1).len(), 4);
        assert_eq!(random_strategy(&refs, 2, 9), random_strategy(&refs, 2, 9));
        let mut counts = [0usize; 4];
        for seed in 0..10_000u64 {
            let pick = random_strategy(&refs, 1, seed);
            counts[owned.iter().position(|s| *s == pick[0]).unwrap()] += 1;
        }
        for c in counts {
            assert!((2350..=2650).contains(&c), "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn selection_size_and_subset(scores in prop::collection::vec(-5.0f64..5.0, 0..40), budget in 1usize..10) {
            let owned = ids(scores.len());
            let refs: Vec<&str> = owned.iter().map(|s| s.as_str()).collect();
            let picked = select_queries(&refs, &scores, budget, &HashSet::new());
            prop_assert_eq!(picked.len(), budget.min(scores.len()));
            prop_assert!(picked.iter().all(|p| owned.contains(p)));
        }

        #[test]
        fn energy_is_symmetric_and_decreasing(z in prop::collection::vec(-5.0f64..5.0, 1..8), k in 0usize..8, bump in 0.01f64..3.0) {
            let mut rev = z.clone();
            rev.reverse();
            prop_assert!((energy_score(&z, 1.0) - energy_score(&rev, 1.0)).abs() < 1e-12);
            let mut up = z.clone();
            let k = k % z.len();
            up[k] += bump;
            prop_assert!(energy_score(&up, 1.0) < energy_score(&z, 1.0));
        }
    }
}
