//! Running a configuration over many instances, and parameter sweeps.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{discover_manifests, TensorBundle};
use crate::config::SearchConfig;
use crate::error::{Error, Result};
use crate::metrics::{report, EvalMode, InstanceRecord};
use crate::search::run_counterfactual;

/// Load every bundle under `dir`, sorted by manifest path.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<TensorBundle>> {
    discover_manifests(dir)?
        .par_iter()
        .map(TensorBundle::load)
        .collect()
}

/// Run `config` on every bundle in parallel; records come back sorted by instance id.
pub fn run_batch(bundles: &[TensorBundle], config: &SearchConfig) -> Result<Vec<InstanceRecord>> {
    config.validate()?;
    let mut records = bundles
        .par_iter()
        .map(|b| Ok(InstanceRecord::annotate(run_counterfactual(b, config)?, b)))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.result.instance_id.cmp(&b.result.instance_id));
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    T,
    U,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::T => "t",
            SweepParameter::U => "u",
        }
    }

    pub fn apply(&self, base: &SearchConfig, value: f64) -> SearchConfig {
        let mut c = *base;
        match self {
            SweepParameter::T => c.t = value,
            SweepParameter::U => c.u = value,
        }
        c
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t" => Ok(SweepParameter::T),
            "u" => Ok(SweepParameter::U),
            other => Err(Error::Argument(format!("cannot sweep {other:?}; expected t or u"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: f64,
    pub instances: usize,
    pub n_cfs: usize,
    pub mean_edits: Option<f64>,
    pub same_kp: f64,
    pub near_kp: f64,
    pub time_per_instance_ms: f64,
    pub mean_evaluations: f64,
    pub mean_candidates: Option<f64>,
}

/// One summary row per value, in the given order.
pub fn sweep(
    bundles: &[TensorBundle],
    base: &SearchConfig,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&value| {
            let records = run_batch(bundles, &parameter.apply(base, value))?;
            let r = report(&records, EvalMode::All)?;
            Ok(SweepRow {
                parameter,
                value,
                instances: r.instances,
                n_cfs: r.n_cfs,
                mean_edits: r.mean_edits,
                same_kp: r.same_kp,
                near_kp: r.near_kp,
                time_per_instance_ms: r.time_per_instance_ms,
                mean_evaluations: r.mean_evaluations,
                mean_candidates: r.mean_candidates,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: [&str; 9] = [
    "parameter",
    "value",
    "time_per_instance_ms",
    "same_kp",
    "n_cfs",
    "mean_edits",
    "near_kp",
    "mean_evaluations",
    "mean_candidates",
];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.parameter.as_str().to_string(),
            r.value.to_string(),
            format!("{:.3}", r.time_per_instance_ms),
            r.same_kp.to_string(),
            r.n_cfs.to_string(),
            opt(r.mean_edits),
            r.near_kp.to_string(),
            r.mean_evaluations.to_string(),
            opt(r.mean_candidates),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
