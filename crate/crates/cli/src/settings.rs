//! Layering of search settings: command-line flags over a TOML file over
//! built-in defaults.

use std::path::Path;

use clap::Args;
use serde::Deserialize;

use cfedit_core::{AttributionMode, EmptyMaskPolicy, EvalMode, Method, ScoreMode, SearchConfig};

/// Keys accepted in a `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSettings {
    pub method: Option<Method>,
    pub t: Option<f64>,
    pub u: Option<f64>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub theta_seg: Option<f64>,
    pub budget: Option<usize>,
    pub score: Option<ScoreMode>,
    pub on_empty_mask: Option<EmptyMaskPolicy>,
    pub attribution: Option<AttributionMode>,
    pub mode: Option<EvalMode>,
}

impl FileSettings {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SearchFlags {
    /// TOML file with search settings; flags given on the command line win.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Cumulative weight-score threshold for the query sequence.
    #[arg(long)]
    pub t: Option<f64>,
    /// Fraction of candidate pairs kept after similarity ranking.
    #[arg(long)]
    pub u: Option<f64>,
    /// Weight of the similarity term in the candidate score.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Similarity temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Mask binarization threshold.
    #[arg(long)]
    pub theta_seg: Option<f64>,
    /// Maximum edits per instance (default: grid cells).
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub score: Option<ScoreMode>,
    #[arg(long)]
    pub on_empty_mask: Option<EmptyMaskPolicy>,
    #[arg(long)]
    pub attribution: Option<AttributionMode>,
    /// Keypoint metric mode: `single` (first edit) or `all` (flipped instances).
    #[arg(long)]
    pub mode: Option<EvalMode>,
}

pub struct Resolved {
    pub search: SearchConfig,
    pub mode: EvalMode,
}

impl SearchFlags {
    pub fn resolve(&self) -> anyhow::Result<Resolved> {
        let file = match &self.config {
            Some(p) => FileSettings::load(p)?,
            None => FileSettings::default(),
        };
        let mut c = SearchConfig::default();
        macro_rules! layer {
            ($($field:ident),+) => {
                $(if let Some(v) = self.$field.or(file.$field) { c.$field = v; })+
            };
        }
        layer!(method, t, u, lambda, tau, theta_seg, score, on_empty_mask, attribution);
        if let Some(b) = self.budget.or(file.budget) {
            c.budget = Some(b);
        }
        c.validate()?;
        Ok(Resolved {
            search: c,
            mode: self.mode.or(file.mode).unwrap_or(EvalMode::All),
        })
    }
}
