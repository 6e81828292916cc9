//! Greedy counterfactual editing.
//!
//! Each round tentatively replaces one un-edited query cell with a distractor
//! cell, in priority order, and classifies the result. The first tentative
//! edit that moves the prediction to the counterfactual class ends the
//! search; otherwise the best-scoring edit is applied and another round
//! starts.

mod head;

pub use head::{argmax, softmax, ClassifierHead};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::attribution::{compute_attribution, grid_mask, weighted_semantic_map, AttributionMap};
use crate::bundle::TensorBundle;
use crate::config::{AttributionMode, EmptyMaskPolicy, Method, ScoreMode, SearchConfig};
use crate::error::{Error, Result};
use crate::sequencing::{score_cells, score_values, select_l_q, EditUniverse};
use crate::similarity::{filter_top_k, score_pairs, CandidatePair};
use crate::tensors::{FeatureMap, GridMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Flipped,
    BudgetExhausted,
    /// Every searchable query cell was edited without a flip.
    CandidatesExhausted,
    NoCandidates,
    /// The query was not predicted as its own class to begin with.
    Skipped,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Flipped => "flipped",
            Status::BudgetExhausted => "budget-exhausted",
            Status::CandidatesExhausted => "candidates-exhausted",
            Status::NoCandidates => "no-candidates",
            Status::Skipped => "skipped",
        }
    }
}

/// Sizes of the candidate sets of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniverseStats {
    pub n_q: usize,
    pub n_d: usize,
    pub t_es: usize,
    pub t_e: usize,
    /// Pairs left after similarity filtering.
    pub searched: usize,
}

impl UniverseStats {
    fn from_universe(u: &EditUniverse, searched: usize) -> Self {
        Self {
            n_q: u.n_q(),
            n_d: u.n_d(),
            t_es: u.t_es(),
            t_e: u.t_e(),
            searched,
        }
    }

    pub fn reduction_ratio(&self) -> f64 {
        self.t_es as f64 / self.t_e as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub instance_id: String,
    pub method: Method,
    pub status: Status,
    pub query_class: usize,
    pub counterfactual_class: usize,
    pub grid: (usize, usize),
    /// Applied edits in order.
    pub edits: Vec<CandidatePair>,
    /// Probability of the counterfactual class before any edit and after each one.
    pub trace: Vec<f64>,
    /// Classifier calls, including the initial classification.
    pub evaluations: usize,
    #[serde(with = "duration_ms")]
    pub wall_time: Duration,
    pub universe: Option<UniverseStats>,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(ms.max(0.0) / 1e3))
    }
}

/// Query features under a partial edit. An edited cell holds its distractor
/// vector, every other cell the original query vector; each cell is edited at
/// most once.
#[derive(Debug, Clone, PartialEq)]
pub struct EditState {
    features: FeatureMap,
    edited: Vec<bool>,
    applied: Vec<CandidatePair>,
    trace: Vec<f64>,
    pooled: Vec<f64>,
}

impl EditState {
    pub fn new(query: &FeatureMap) -> Self {
        let mut pooled = vec![0.0; query.channels()];
        accumulate(&mut pooled, query);
        Self {
            features: query.clone(),
            edited: vec![false; query.cells()],
            applied: Vec::new(),
            trace: Vec::new(),
            pooled,
        }
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn is_edited(&self, cell: usize) -> bool {
        self.edited[cell]
    }

    pub fn gating(&self) -> &[bool] {
        &self.edited
    }

    pub fn applied(&self) -> &[CandidatePair] {
        &self.applied
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    /// Append the counterfactual-class probability of the current features.
    pub fn record(&mut self, probability: f64) {
        self.trace.push(probability);
    }

    /// Replace query cell `pair.query_cell` with the distractor's cell.
    pub fn apply_edit(&self, pair: &CandidatePair, distractors: &[FeatureMap]) -> Result<Self> {
        let i = pair.query_cell;
        if i >= self.edited.len() {
            return Err(Error::Argument(format!("query cell {i} out of range")));
        }
        if self.edited[i] {
            return Err(Error::Precondition(format!("query cell {i} already edited")));
        }
        let source = distractors
            .get(pair.distractor)
            .ok_or_else(|| Error::Argument(format!("no distractor {}", pair.distractor)))?;
        if !source.same_shape(&self.features) {
            return Err(Error::Argument("distractor shape differs from query".into()));
        }
        let value = source.try_cell(pair.distractor_cell)?;
        let mut next = self.clone();
        next.features.set_cell(i, value);
        next.edited[i] = true;
        next.applied.push(*pair);
        next.pooled = vec![0.0; self.pooled.len()];
        accumulate(&mut next.pooled, &next.features);
        Ok(next)
    }
}

fn accumulate(sum: &mut [f64], features: &FeatureMap) {
    for cell in features.data().chunks_exact(features.channels()) {
        for (s, &v) in sum.iter_mut().zip(cell) {
            *s += v as f64;
        }
    }
}

/// Outcome of one greedy round.
#[derive(Debug, Clone)]
pub struct Step {
    pub pair: CandidatePair,
    pub state: EditState,
    /// Class probabilities of the new state.
    pub probabilities: Vec<f64>,
    pub flipped: bool,
    pub evaluations: usize,
}

/// Per-round scoring parameters.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub target: usize,
    pub lambda: f64,
    pub score: ScoreMode,
}

/// One greedy round over `candidates`, which must already be in priority order.
///
/// Returns `None` when every candidate's query cell has been edited.
pub fn greedy_step(
    state: &EditState,
    candidates: &[CandidatePair],
    head: &ClassifierHead,
    distractors: &[FeatureMap],
    params: StepParams,
) -> Result<Option<Step>> {
    let cells = state.features.cells();
    let mut evaluations = 0;
    let mut best: Option<CandidatePair> = None;
    let mut tentative = vec![0.0f64; state.pooled.len()];
    for cand in candidates {
        if state.edited[cand.query_cell] {
            continue;
        }
        evaluations += 1;
        let old = state.features.cell(cand.query_cell);
        let new = distractors[cand.distractor].try_cell(cand.distractor_cell)?;
        for (t, ((&s, &o), &n)) in tentative.iter_mut().zip(state.pooled.iter().zip(old).zip(new)) {
            *t = s - o as f64 + n as f64;
        }
        let logits = head.logits_from_sum(&tentative, cells);
        let probs = softmax(&logits);
        if argmax(&probs) == params.target {
            // Confirm against a full classification of the edited features.
            let next = state.apply_edit(cand, distractors)?;
            let confirmed = head.classify(&next.features)?;
            if argmax(&confirmed) == params.target {
                let mut pair = *cand;
                pair.combined_score = score_of(&probs, &logits, cand, params);
                let mut next = next;
                next.applied.last_mut().expect("just applied").combined_score = pair.combined_score;
                return Ok(Some(Step {
                    pair,
                    state: next,
                    probabilities: confirmed,
                    flipped: true,
                    evaluations,
                }));
            }
        }
        let score = score_of(&probs, &logits, cand, params);
        if best.is_none_or(|b| score > b.combined_score) {
            best = Some(CandidatePair {
                combined_score: score,
                ..*cand
            });
        }
    }
    let Some(pair) = best else {
        return Ok(None);
    };
    let state = state.apply_edit(&pair, distractors)?;
    let probabilities = head.classify(&state.features)?;
    let flipped = argmax(&probabilities) == params.target;
    Ok(Some(Step {
        pair,
        state,
        probabilities,
        flipped,
        evaluations,
    }))
}

fn score_of(probs: &[f64], logits: &[f64], cand: &CandidatePair, params: StepParams) -> f64 {
    let base = match params.score {
        ScoreMode::Prob => probs[params.target],
        ScoreMode::Logit => logits[params.target],
    };
    base + params.lambda * cand.sim_loglik
}

/// Candidate universe for a method, or the status to report when there is none.
fn build_universe(
    bundle: &TensorBundle,
    config: &SearchConfig,
) -> Result<std::result::Result<EditUniverse, Status>> {
    let (h, w) = bundle.grid();
    let n = bundle.distractors.len();
    match config.method {
        Method::Exhaustive | Method::Simonly => Ok(Ok(EditUniverse::exhaustive(h * w, n)?)),
        Method::Wsae => wsae_universe(bundle, config),
    }
}

fn wsae_universe(
    bundle: &TensorBundle,
    config: &SearchConfig,
) -> Result<std::result::Result<EditUniverse, Status>> {
    let (h, w) = bundle.grid();
    let theta = config.theta_seg as f32;
    let full = GridMap::filled(h, w, 1.0)?;
    let fallback = config.on_empty_mask == EmptyMaskPolicy::Full;

    let attribution = match config.attribution {
        AttributionMode::Cam => compute_attribution(
            &bundle.query.features,
            &bundle.class_weights,
            bundle.query.class,
        )?,
        AttributionMode::Uniform => AttributionMap::uniform(h, w)?,
    };
    let query_mask = bundle.query.mask.as_ref().unwrap_or(&full);
    let semantic = match weighted_semantic_map(query_mask, &attribution, theta) {
        Ok(s) => s,
        Err(Error::DegenerateMask { .. }) if fallback => {
            weighted_semantic_map(&full, &attribution, theta)?
        }
        Err(Error::DegenerateMask { .. }) => return Ok(Err(Status::NoCandidates)),
        Err(e) => return Err(e),
    };
    let scores = match score_cells(&semantic) {
        Ok(s) => s,
        // Attribution vanishes on the whole mask: rank mask cells evenly.
        Err(Error::DegenerateInput(_)) if fallback => score_values(semantic.mask())?,
        Err(Error::DegenerateInput(_)) => return Ok(Err(Status::NoCandidates)),
        Err(e) => return Err(e),
    };
    let l_q = select_l_q(&scores, config.t)?;

    let mut masks = Vec::with_capacity(bundle.distractors.len());
    for d in &bundle.distractors {
        let m = match &d.mask {
            Some(m) => grid_mask(m, h, w, theta)?,
            None => full.clone(),
        };
        if fallback && m.nonzero_indices().is_empty() {
            masks.push(full.clone());
        } else {
            masks.push(m);
        }
    }
    match crate::sequencing::build_universe(l_q, &masks) {
        Ok(u) => Ok(Ok(u)),
        Err(Error::NoCandidates) => Ok(Err(Status::NoCandidates)),
        Err(e) => Err(e),
    }
}

/// Search candidates of `universe` after similarity filtering, in priority
/// order: query rank, then distractor, then distractor cell.
pub fn prioritized_candidates(
    query: &FeatureMap,
    distractors: &[FeatureMap],
    universe: &EditUniverse,
    tau: f64,
    u: f64,
) -> Result<Vec<CandidatePair>> {
    let pairs = score_pairs(query, distractors, universe, tau)?;
    let mut kept = filter_top_k(&pairs, u)?;
    let mut rank = vec![usize::MAX; query.cells()];
    for (r, &i) in universe.query().iter().enumerate() {
        rank[i] = r;
    }
    kept.sort_by_key(|p| (rank[p.query_cell], p.distractor, p.distractor_cell));
    Ok(kept)
}

/// Run the configured method on one instance.
pub fn run_counterfactual(bundle: &TensorBundle, config: &SearchConfig) -> Result<CounterfactualResult> {
    config.validate()?;
    bundle.validate()?;
    let started = Instant::now();
    let (h, w) = bundle.grid();
    let target = bundle.counterfactual_class;
    let (u, lambda) = match config.method {
        Method::Exhaustive => (1.0, 0.0),
        _ => (config.u, config.lambda),
    };
    let query = &bundle.query.features;
    let distractors = bundle.distractor_features();

    let mut state = EditState::new(query);
    let initial = bundle.head.classify(query)?;
    state.record(initial[target]);
    let mut evaluations = 1;
    let mut result = CounterfactualResult {
        instance_id: bundle.id().to_string(),
        method: config.method,
        status: Status::Skipped,
        query_class: bundle.query.class,
        counterfactual_class: target,
        grid: (h, w),
        edits: Vec::new(),
        trace: Vec::new(),
        evaluations,
        wall_time: Duration::ZERO,
        universe: None,
    };
    let finish = |mut r: CounterfactualResult, status, state: EditState, evaluations| {
        r.status = status;
        r.edits = state.applied;
        r.trace = state.trace;
        r.evaluations = evaluations;
        r.wall_time = started.elapsed();
        r
    };

    if argmax(&initial) != bundle.query.class {
        return Ok(finish(result, Status::Skipped, state, evaluations));
    }
    let universe = match build_universe(bundle, config)? {
        Ok(u) => u,
        Err(status) => return Ok(finish(result, status, state, evaluations)),
    };
    let candidates = prioritized_candidates(query, &distractors, &universe, config.tau, u)?;
    result.universe = Some(UniverseStats::from_universe(&universe, candidates.len()));

    let budget = config.budget.unwrap_or(h * w);
    let params = StepParams {
        target,
        lambda,
        score: config.score,
    };
    for _ in 0..budget {
        match greedy_step(&state, &candidates, &bundle.head, &distractors, params)? {
            None => return Ok(finish(result, Status::CandidatesExhausted, state, evaluations)),
            Some(step) => {
                evaluations += step.evaluations;
                state = step.state;
                state.record(step.probabilities[target]);
                if step.flipped {
                    return Ok(finish(result, Status::Flipped, state, evaluations));
                }
            }
        }
    }
    Ok(finish(result, Status::BudgetExhausted, state, evaluations))
}

/// All `HW·n·HW` combinations in ascending `(i, distractor, j)` order, no
/// masks, no similarity term.
pub fn baseline_exhaustive(bundle: &TensorBundle, config: &SearchConfig) -> Result<CounterfactualResult> {
    run_counterfactual(bundle, &config.with_method(Method::Exhaustive))
}

/// Similarity pruning over every cell, ascending priority, no masks.
pub fn baseline_similarity_only(
    bundle: &TensorBundle,
    config: &SearchConfig,
) -> Result<CounterfactualResult> {
    run_counterfactual(bundle, &config.with_method(Method::Simonly))
}
