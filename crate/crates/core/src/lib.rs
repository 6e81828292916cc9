//! Counterfactual explanations for image classifiers by greedy feature-cell
//! replacement.
//!
//! A query image's spatial feature map is edited cell by cell with cells taken
//! from distractor images of a counterfactual class until the classifier head
//! changes its prediction. Candidate edits are restricted to semantically
//! relevant query cells (attribution inside a segmentation mask), to
//! foreground distractor cells, and to the most similar pairs.

pub mod attribution;
pub mod batch;
pub mod bundle;
pub mod config;
pub mod error;
pub mod metrics;
pub mod search;
pub mod sequencing;
pub mod similarity;
pub mod synthetic;
pub mod tensors;

pub use attribution::{compute_attribution, weighted_semantic_map, AttributionMap, ChannelClassWeights};
pub use bundle::{discover_manifests, ImageRecord, TensorBundle};
pub use config::{AttributionMode, EmptyMaskPolicy, Method, ScoreMode, SearchConfig};
pub use error::{Error, Result};
pub use metrics::{report, EvalMode, InstanceRecord, KeypointSet, MetricsReport};
pub use search::{
    baseline_exhaustive, baseline_similarity_only, run_counterfactual, ClassifierHead,
    CounterfactualResult, Status,
};
pub use sequencing::{EditUniverse, ScoredIndexList};
pub use similarity::{CandidatePair, SimilarityConfig};
pub use tensors::{FeatureMap, GridMap};
