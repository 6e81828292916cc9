//! Editing sequences for the query (`l_Q`) and distractors (`l_D`).
//!
//! Query cells are ranked by a masked softmax over the weighted semantic map
//! and truncated at the first prefix whose cumulative score reaches `t`.
//! Distractor cells are taken in position order from their masks.

use std::cmp::Ordering;

use crate::attribution::WeightedSemanticMap;
use crate::error::{Error, Result};
use crate::tensors::{masked_softmax, GridMap};

/// Slack used when comparing a cumulative score against the threshold.
pub const MASS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCell {
    pub score: f64,
    pub index: usize,
}

/// Cells ordered by descending score, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredIndexList {
    entries: Vec<ScoredCell>,
}

impl ScoredIndexList {
    /// Sorts `entries` into ranking order. Indices must be unique.
    pub fn new(mut entries: Vec<ScoredCell>) -> Self {
        entries.sort_by(rank_order);
        Self { entries }
    }

    pub fn entries(&self) -> &[ScoredCell] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// Sum of the first `m` scores, accumulated in ranking order.
    pub fn prefix_mass(&self, m: usize) -> f64 {
        self.entries[..m].iter().map(|e| e.score).sum()
    }
}

fn rank_order(a: &ScoredCell, b: &ScoredCell) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.index.cmp(&b.index))
}

pub fn score_cells(semantic: &WeightedSemanticMap) -> Result<ScoredIndexList> {
    score_values(semantic.values())
}

/// Masked softmax over a flattened grid, restricted to its non-zero cells.
pub fn score_values(values: &GridMap) -> Result<ScoredIndexList> {
    let w: Vec<f64> = values.data().iter().map(|&v| v as f64).collect();
    let scores = masked_softmax(&w)?;
    let entries = w
        .iter()
        .zip(scores)
        .enumerate()
        .filter(|(_, (&wi, _))| wi != 0.0)
        .map(|(index, (_, score))| ScoredCell { score, index })
        .collect();
    Ok(ScoredIndexList::new(entries))
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Argument(format!("threshold t = {t} outside (0, 1]")));
    }
    Ok(())
}

/// Number of leading entries kept for threshold `t`: the smallest `m` whose
/// cumulative score reaches `t`, or every entry when rounding keeps the total
/// just below it.
pub fn cutoff(scores: &ScoredIndexList, t: f64) -> Result<usize> {
    check_threshold(t)?;
    let mut cumulative = 0.0;
    for (m, e) in scores.entries.iter().enumerate() {
        cumulative += e.score;
        if cumulative >= t - MASS_EPS {
            return Ok(m + 1);
        }
    }
    Ok(scores.len())
}

pub fn select_l_q(scores: &ScoredIndexList, t: f64) -> Result<Vec<usize>> {
    let m = cutoff(scores, t)?;
    Ok(scores.entries[..m].iter().map(|e| e.index).collect())
}

/// Hinge on the unreached mass: `max(t − Σ_{i≤m} score_i, 0)`.
pub fn hinge_l_o(scores: &ScoredIndexList, m: usize, t: f64) -> Result<f64> {
    if m > scores.len() {
        return Err(Error::Argument(format!(
            "prefix length {m} exceeds {} scores",
            scores.len()
        )));
    }
    let gap = t - scores.prefix_mass(m);
    Ok(if gap <= MASS_EPS { 0.0 } else { gap })
}

/// Ascending indices of the cells set in a binarized mask.
pub fn select_l_d(mask: &GridMap) -> Vec<usize> {
    mask.nonzero_indices()
}

/// The set of admissible (query cell, distractor, distractor cell) edits.
#[derive(Debug, Clone, PartialEq)]
pub struct EditUniverse {
    query: Vec<usize>,
    distractors: Vec<Vec<usize>>,
    cells: usize,
}

impl EditUniverse {
    pub fn new(query: Vec<usize>, distractors: Vec<Vec<usize>>, cells: usize) -> Result<Self> {
        if distractors.is_empty() {
            return Err(Error::Argument("at least one distractor is required".into()));
        }
        if distractors.iter().all(|d| d.is_empty()) || query.is_empty() {
            return Err(Error::NoCandidates);
        }
        Ok(Self {
            query,
            distractors,
            cells,
        })
    }

    /// Every cell of the query against every cell of each distractor.
    pub fn exhaustive(cells: usize, distractors: usize) -> Result<Self> {
        let all: Vec<usize> = (0..cells).collect();
        Self::new(all.clone(), vec![all; distractors], cells)
    }

    /// Query cells in priority order.
    pub fn query(&self) -> &[usize] {
        &self.query
    }

    pub fn distractor(&self, k: usize) -> &[usize] {
        &self.distractors[k]
    }

    pub fn distractors(&self) -> &[Vec<usize>] {
        &self.distractors
    }

    pub fn n_q(&self) -> usize {
        self.query.len()
    }

    pub fn n_d(&self) -> usize {
        self.distractors.iter().map(Vec::len).sum()
    }

    /// Selected combination count `N_Q · N_D`.
    pub fn t_es(&self) -> usize {
        self.n_q() * self.n_d()
    }

    /// Exhaustive combination count `HW · n · HW`.
    pub fn t_e(&self) -> usize {
        self.cells * self.distractors.len() * self.cells
    }

    pub fn reduction_ratio(&self) -> f64 {
        self.t_es() as f64 / self.t_e() as f64
    }
}

/// Combine `l_Q` with the distractor masks (already on the feature grid).
pub fn build_universe(l_q: Vec<usize>, masks: &[GridMap]) -> Result<EditUniverse> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Argument("at least one distractor is required".into()))?;
    if masks.iter().any(|m| m.dims() != first.dims()) {
        return Err(Error::Argument("distractor masks differ in dims".into()));
    }
    let lists = masks.iter().map(select_l_d).collect();
    EditUniverse::new(l_q, lists, first.cells())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(scores: &[f64]) -> ScoredIndexList {
        ScoredIndexList::new(
            scores
                .iter()
                .enumerate()
                .map(|(index, &score)| ScoredCell { score, index })
                .collect(),
        )
    }

    #[test]
    fn single_cell_scores_one() {
        let g = GridMap::new(1, 3, vec![0.0, 0.0, 4.2]).unwrap();
        let s = score_values(&g).unwrap();
        assert_eq!(s.entries(), &[ScoredCell { score: 1.0, index: 2 }]);
    }

    #[test]
    fn ties_ordered_by_index() {
        let mut v = vec![0.0; 6];
        v[5] = 3.0;
        v[2] = 3.0;
        let s = score_values(&GridMap::new(2, 3, v).unwrap()).unwrap();
        assert_eq!(s.indices(), vec![2, 5]);
        assert!(s.entries().iter().all(|e| e.score == 0.5));
    }

    #[test]
    fn softmax_ranking_matches_closed_form() {
        let s = score_values(&GridMap::new(1, 3, vec![0.0, 1.0, 2.0]).unwrap()).unwrap();
        let e = std::f64::consts::E;
        assert_eq!(s.indices(), vec![2, 1]);
        assert!((s.entries()[0].score - e / (1.0 + e)).abs() < 1e-12);
        assert!((s.entries()[0].score - 0.73106).abs() < 1e-5);
        assert!((s.entries()[1].score - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn all_zero_map_is_degenerate() {
        let g = GridMap::filled(2, 2, 0.0).unwrap();
        assert!(matches!(score_values(&g), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn threshold_selection() {
        let s = list(&[0.4, 0.3, 0.2, 0.1]);
        assert_eq!(select_l_q(&s, 0.5).unwrap(), vec![0, 1]);
        assert_eq!(select_l_q(&s, 1.0).unwrap(), vec![0, 1, 2, 3]);
        let s = list(&[0.6, 0.4]);
        assert_eq!(select_l_q(&s, 0.6).unwrap(), vec![0]);
        assert!(select_l_q(&s, 0.0).is_err());
        assert!(select_l_q(&s, 1.5).is_err());
    }

    #[test]
    fn hinge_values() {
        let s = list(&[0.4, 0.3]);
        assert_eq!(hinge_l_o(&s, 2, 0.7).unwrap(), 0.0);
        assert_eq!(hinge_l_o(&s, 0, 0.5).unwrap(), 0.5);
        assert!((hinge_l_o(&s, 1, 0.5).unwrap() - 0.1).abs() < 1e-15);
        let full = list(&[0.25, 0.25, 0.5]);
        assert_eq!(hinge_l_o(&full, 3, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn distractor_sequences() {
        assert_eq!(select_l_d(&GridMap::filled(2, 2, 1.0).unwrap()), vec![0, 1, 2, 3]);
        assert!(select_l_d(&GridMap::filled(2, 2, 0.0).unwrap()).is_empty());
        let diag = GridMap::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(select_l_d(&diag), vec![0, 3]);
    }

    #[test]
    fn universe_counts() {
        let ones = GridMap::filled(7, 7, 1.0).unwrap();
        let u = build_universe((0..49).collect(), &[ones]).unwrap();
        assert_eq!(u.t_es(), 2401);
        assert_eq!(u.t_es(), u.t_e());

        let u = EditUniverse::new((0..10).collect(), vec![(0..20).collect()], 49).unwrap();
        assert_eq!(u.t_es(), 200);

        let u = EditUniverse::new(vec![0, 1, 2, 3], vec![vec![0, 1, 2], vec![0, 1, 2, 3, 4]], 9)
            .unwrap();
        assert_eq!(u.t_es(), 32);
        assert_eq!(u.t_e(), 162);

        let empty = GridMap::filled(2, 2, 0.0).unwrap();
        assert!(matches!(
            build_universe(vec![0], &[empty.clone(), empty]),
            Err(Error::NoCandidates)
        ));
    }

    fn normalized(raw: Vec<f64>) -> ScoredIndexList {
        let total: f64 = raw.iter().sum();
        list(&raw.into_iter().map(|v| v / total).collect::<Vec<_>>())
    }

    proptest! {
        #[test]
        fn cutoff_is_minimal(raw in prop::collection::vec(0.01f64..1.0, 1..30), t in 0.001f64..=1.0) {
            let s = normalized(raw);
            let m = cutoff(&s, t).unwrap();
            prop_assert!(m >= 1);
            prop_assert_eq!(hinge_l_o(&s, m, t).unwrap(), 0.0);
            prop_assert!(hinge_l_o(&s, m - 1, t).unwrap() > 0.0);
        }

        #[test]
        fn selection_is_monotone_in_t(
            raw in prop::collection::vec(0.01f64..1.0, 1..30),
            a in 0.001f64..=1.0, b in 0.001f64..=1.0,
        ) {
            let s = normalized(raw);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = select_l_q(&s, lo).unwrap();
            let large = select_l_q(&s, hi).unwrap();
            prop_assert!(small.len() <= large.len());
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }
    }
}
