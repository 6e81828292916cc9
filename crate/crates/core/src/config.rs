use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::SimilarityConfig;

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Argument(format!(
                        concat!("unknown ", stringify!($name), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

/// Which candidate universe and ordering the search uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Weighted semantic map, thresholded query sequence, similarity pruning.
    Wsae,
    /// Every query cell against every distractor cell in position order.
    Exhaustive,
    /// Similarity pruning over all cells, no masks and no attribution ranking.
    Simonly,
}
string_enum!(Method { Wsae => "wsae", Exhaustive => "exhaustive", Simonly => "simonly" });

/// Quantity of the counterfactual class maximized in each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Prob,
    Logit,
}
string_enum!(ScoreMode { Prob => "prob", Logit => "logit" });

/// What to do when a segmentation mask selects no cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyMaskPolicy {
    /// Report the instance as having no candidates.
    Skip,
    /// Fall back to the full grid.
    Full,
}
string_enum!(EmptyMaskPolicy { Skip => "skip", Full => "full" });

/// Source of the query attribution map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionMode {
    /// ReLU-gated channel weights applied to the query features.
    Cam,
    /// Constant map; every cell in the mask ranks equally.
    Uniform,
}
string_enum!(AttributionMode { Cam => "cam", Uniform => "uniform" });

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub method: Method,
    /// Cumulative weight-score threshold for the query sequence.
    pub t: f64,
    /// Fraction of candidate pairs kept after similarity ranking.
    pub u: f64,
    /// Weight of the similarity log-likelihood in the candidate score.
    pub lambda: f64,
    /// Similarity temperature.
    pub tau: f64,
    /// Mask binarization threshold after resizing.
    pub theta_seg: f64,
    /// Maximum number of edits; `None` means one per grid cell.
    pub budget: Option<usize>,
    pub score: ScoreMode,
    pub on_empty_mask: EmptyMaskPolicy,
    pub attribution: AttributionMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let sim = SimilarityConfig::default();
        Self {
            method: Method::Wsae,
            t: 0.5,
            u: sim.u,
            lambda: sim.lambda,
            tau: sim.tau,
            theta_seg: 0.5,
            budget: None,
            score: ScoreMode::Prob,
            on_empty_mask: EmptyMaskPolicy::Skip,
            attribution: AttributionMode::Cam,
        }
    }
}

impl SearchConfig {
    pub fn with_method(self, method: Method) -> Self {
        Self { method, ..self }
    }

    /// Settings under which every pruning step is a no-op.
    pub fn unpruned(self) -> Self {
        Self {
            t: 1.0,
            u: 1.0,
            lambda: 0.0,
            ..self
        }
    }

    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            tau: self.tau,
            u: self.u,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(Error::Argument(format!("t = {} outside (0, 1]", self.t)));
        }
        if !(0.0..1.0).contains(&self.theta_seg) {
            return Err(Error::Argument(format!(
                "theta_seg = {} outside [0, 1)",
                self.theta_seg
            )));
        }
        self.similarity().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_parsing() {
        let c = SearchConfig::default();
        assert_eq!((c.t, c.u, c.lambda, c.tau, c.theta_seg), (0.5, 0.2, 0.1, 0.1, 0.5));
        c.validate().unwrap();
        assert_eq!("simonly".parse::<Method>().unwrap(), Method::Simonly);
        assert!("beam".parse::<Method>().is_err());
        assert_eq!(ScoreMode::Logit.to_string(), "logit");
    }

    #[test]
    fn out_of_range_rejected() {
        for bad in [
            SearchConfig { t: 0.0, ..Default::default() },
            SearchConfig { u: 1.5, ..Default::default() },
            SearchConfig { tau: 0.0, ..Default::default() },
            SearchConfig { lambda: -1.0, ..Default::default() },
            SearchConfig { theta_seg: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
