//! Semantic similarity between query cells and distractor cells.
//!
//! For a query cell `i`, the log-likelihood that it corresponds to distractor
//! cell `j` is a temperature-scaled log-softmax of the dot product
//! `q_i · d_j / τ` over every candidate distractor cell in the universe.
//! Only the top `⌈u·N⌉` pairs by log-likelihood are searched.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequencing::EditUniverse;
use crate::tensors::{dot, FeatureMap};

/// Slack applied before taking the ceiling of `u·N`, so that products such as
/// `0.1 × 30` do not round up past the intended count.
const CEIL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub query_cell: usize,
    /// Position of the distractor in the bundle.
    pub distractor: usize,
    pub distractor_cell: usize,
    pub sim_loglik: f64,
    /// Filled in by the search with the score it was last evaluated at.
    pub combined_score: f64,
}

impl CandidatePair {
    pub fn new(query_cell: usize, distractor: usize, distractor_cell: usize) -> Self {
        Self {
            query_cell,
            distractor,
            distractor_cell,
            sim_loglik: 0.0,
            combined_score: 0.0,
        }
    }

    fn key(&self) -> (usize, usize, usize) {
        (self.query_cell, self.distractor, self.distractor_cell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub tau: f64,
    pub u: f64,
    pub lambda: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            u: 0.2,
            lambda: 0.1,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Argument(format!("tau = {} must be > 0", self.tau)));
        }
        if !(self.u > 0.0 && self.u <= 1.0) {
            return Err(Error::Argument(format!("u = {} outside (0, 1]", self.u)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Argument(format!("lambda = {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// Log-softmax of `dots / tau`, with max subtraction.
pub fn log_softmax(dots: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("tau = {tau} must be > 0")));
    }
    if dots.is_empty() {
        return Err(Error::NoCandidates);
    }
    let scaled: Vec<f64> = dots.iter().map(|d| d / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(scaled.iter().map(|s| s - max - log_total).collect())
}

/// Log-likelihoods of query cell `cell` against every distractor candidate in
/// `universe`, in candidate order (distractor, then ascending cell).
pub fn pair_loglik(
    query: &FeatureMap,
    cell: usize,
    distractors: &[FeatureMap],
    universe: &EditUniverse,
    tau: f64,
) -> Result<Vec<f64>> {
    let q = query.try_cell(cell)?;
    let mut dots = Vec::with_capacity(universe.n_d());
    for (k, cells) in universe.distractors().iter().enumerate() {
        let d = distractors
            .get(k)
            .ok_or_else(|| Error::Argument(format!("missing distractor {k}")))?;
        if d.channels() != query.channels() {
            return Err(Error::Argument(format!(
                "distractor {k} has {} channels, query {}",
                d.channels(),
                query.channels()
            )));
        }
        for &j in cells {
            dots.push(dot(q, d.try_cell(j)?));
        }
    }
    log_softmax(&dots, tau)
}

/// Every pair of the universe with its log-likelihood, ordered by query
/// priority, then distractor, then distractor cell.
pub fn score_pairs(
    query: &FeatureMap,
    distractors: &[FeatureMap],
    universe: &EditUniverse,
    tau: f64,
) -> Result<Vec<CandidatePair>> {
    let per_cell: Vec<Vec<CandidatePair>> = universe
        .query()
        .par_iter()
        .map(|&i| {
            let ll = pair_loglik(query, i, distractors, universe, tau)?;
            let pairs = universe
                .distractors()
                .iter()
                .enumerate()
                .flat_map(|(k, cells)| cells.iter().map(move |&j| (k, j)))
                .zip(ll)
                .map(|((k, j), l)| CandidatePair {
                    sim_loglik: l,
                    ..CandidatePair::new(i, k, j)
                })
                .collect();
            Ok(pairs)
        })
        .collect::<Result<_>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// `⌈u·n⌉`, at least one and at most `n`.
pub fn top_k_count(n: usize, u: f64) -> usize {
    ((u * n as f64 - CEIL_EPS).ceil() as usize).clamp(1, n.max(1))
}

/// Keep the `⌈u·N⌉` pairs with the largest log-likelihood. Ties go to the
/// smaller (query cell, distractor, distractor cell). The result is in
/// descending log-likelihood order.
pub fn filter_top_k(pairs: &[CandidatePair], u: f64) -> Result<Vec<CandidatePair>> {
    if pairs.is_empty() {
        return Err(Error::NoCandidates);
    }
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::Argument(format!("u = {u} outside (0, 1]")));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| {
        b.sim_loglik
            .partial_cmp(&a.sim_loglik)
            .unwrap_or(Ordering::Equal)
            .then(a.key().cmp(&b.key()))
    });
    sorted.truncate(top_k_count(pairs.len(), u));
    Ok(sorted)
}

/// Mean log-likelihood of the selected pairs; larger means more similar.
pub fn sim_loss(selected: &[CandidatePair]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::NoCandidates);
    }
    Ok(selected.iter().map(|p| p.sim_loglik).sum::<f64>() / selected.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(i: usize, k: usize, j: usize, ll: f64) -> CandidatePair {
        CandidatePair {
            sim_loglik: ll,
            ..CandidatePair::new(i, k, j)
        }
    }

    #[test]
    fn uniform_dots_give_log_one_over_n() {
        let ll = log_softmax(&[2.0; 4], 0.1).unwrap();
        for l in ll {
            assert!((l - 0.25f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_candidates_closed_form() {
        let e = std::f64::consts::E;
        let ll = log_softmax(&[1.0, 0.0], 1.0).unwrap();
        assert!((ll[0] - (e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((ll[1] - (1.0 / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((ll[0] + 0.31326).abs() < 1e-5);
        assert!((ll[1] + 1.31326).abs() < 1e-5);
    }

    #[test]
    fn high_temperature_flattens() {
        let ll = log_softmax(&[0.3, -0.1, 0.5], 1e6).unwrap();
        for l in ll {
            assert!((l - (1.0f64 / 3.0).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn non_positive_tau_rejected() {
        assert!(matches!(log_softmax(&[1.0], 0.0), Err(Error::Argument(_))));
        assert!(matches!(log_softmax(&[1.0], -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn pair_loglik_over_universe() {
        let q = FeatureMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let d0 = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let d1 = FeatureMap::new(1, 2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let u = EditUniverse::new(vec![0], vec![vec![0, 1], vec![1]], 2).unwrap();
        let ll = pair_loglik(&q, 0, &[d0.clone(), d1.clone()], &u, 1.0).unwrap();
        let expected = log_softmax(&[1.0, 0.0, 1.0], 1.0).unwrap();
        assert_eq!(ll, expected);
        let pairs = score_pairs(&q, &[d0, d1], &u, 1.0).unwrap();
        let keys: Vec<_> = pairs.iter().map(|p| p.key()).collect();
        assert_eq!(keys, vec![(0, 0, 0), (0, 0, 1), (0, 1, 1)]);
    }

    #[test]
    fn top_k_counts() {
        let pairs: Vec<_> = (0..10).map(|j| pair(0, 0, j, -(j as f64))).collect();
        assert_eq!(filter_top_k(&pairs, 1.0).unwrap().len(), 10);
        let kept = filter_top_k(&pairs, 0.2).unwrap();
        assert_eq!(kept.iter().map(|p| p.distractor_cell).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(top_k_count(30, 0.1), 3);
        assert_eq!(top_k_count(10, 0.5), 5);
        assert_eq!(top_k_count(11, 0.5), 6);
    }

    #[test]
    fn ties_resolved_by_index() {
        let pairs = vec![pair(1, 0, 0, -1.0), pair(0, 1, 2, -1.0), pair(0, 0, 5, -1.0)];
        let kept = filter_top_k(&pairs, 0.34).unwrap();
        assert_eq!(
            kept.iter().map(|p| p.key()).collect::<Vec<_>>(),
            vec![(0, 0, 5), (0, 1, 2)]
        );
        assert!(matches!(filter_top_k(&[], 0.5), Err(Error::NoCandidates)));
    }

    #[test]
    fn sim_loss_is_mean() {
        assert_eq!(sim_loss(&[pair(0, 0, 0, -0.3)]).unwrap(), -0.3);
        let two = [pair(0, 0, 0, -0.2), pair(0, 0, 1, -0.4)];
        assert!((sim_loss(&two).unwrap() + 0.3).abs() < 1e-15);
        let uniform: Vec<_> = log_softmax(&[0.7; 4], 0.1)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(j, l)| pair(0, 0, j, l))
            .collect();
        assert!((sim_loss(&uniform).unwrap() + 1.38629).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn normalized_shift_invariant_monotone(
            dots in prop::collection::vec(-5.0f64..5.0, 1..20),
            shift in -50.0f64..50.0,
            tau in 0.05f64..5.0,
        ) {
            let ll = log_softmax(&dots, tau).unwrap();
            let mass: f64 = ll.iter().map(|l| l.exp()).sum();
            prop_assert!((mass - 1.0).abs() <= 1e-6);
            prop_assert!(ll.iter().all(|&l| l <= 1e-15));
            let shifted: Vec<f64> = dots.iter().map(|d| d + shift).collect();
            let ll2 = log_softmax(&shifted, tau).unwrap();
            for (a, b) in ll.iter().zip(&ll2) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            for i in 0..dots.len() {
                for j in 0..dots.len() {
                    if dots[i] > dots[j] {
                        prop_assert!(ll[i] >= ll[j]);
                    }
                }
            }
        }

        #[test]
        fn top_k_size_and_chain(lls in prop::collection::vec(-10.0f64..0.0, 1..60), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
            let pairs: Vec<_> = lls.iter().enumerate().map(|(j, &l)| pair(j % 3, j % 2, j, l)).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = filter_top_k(&pairs, lo).unwrap();
            let large = filter_top_k(&pairs, hi).unwrap();
            prop_assert_eq!(small.len(), top_k_count(pairs.len(), lo));
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }
    }
}
