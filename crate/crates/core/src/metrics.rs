//! Keypoint-based semantic metrics, probability-gain statistics and batch
//! reports.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::TensorBundle;
use crate::error::{Error, Result};
use crate::search::{CounterfactualResult, Status};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub part: String,
    pub x: f64,
    pub y: f64,
    #[serde(default = "visible_default")]
    pub visible: bool,
}

fn visible_default() -> bool {
    true
}

/// Keypoints of one image, in pixel coordinates of a `width × height` image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub width: u32,
    pub height: u32,
    pub points: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Argument("keypoint image dims must be positive".into()));
        }
        for p in self.points.iter().filter(|p| p.visible) {
            let inside = p.x >= 0.0
                && p.y >= 0.0
                && p.x <= self.width as f64
                && p.y <= self.height as f64;
            if !inside {
                return Err(Error::Argument(format!(
                    "visible keypoint {} at ({}, {}) outside {}x{}",
                    p.part, p.x, p.y, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: KeypointSet = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Part ids of the visible keypoints falling into each grid cell.
    pub fn cell_parts(&self, grid: (usize, usize)) -> CellParts {
        let mut cells = vec![BTreeSet::new(); grid.0 * grid.1];
        for p in self.points.iter().filter(|p| p.visible) {
            cells[cell_of(p, (self.width, self.height), grid)].insert(p.part.clone());
        }
        CellParts(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellParts(Vec<BTreeSet<String>>);

impl CellParts {
    pub fn empty(cells: usize) -> Self {
        CellParts(vec![BTreeSet::new(); cells])
    }

    pub fn parts(&self, cell: usize) -> &BTreeSet<String> {
        &self.0[cell]
    }
}

/// Grid cell holding a keypoint: `(⌊y/H_img·H⌋, ⌊x/W_img·W⌋)`, clamped,
/// flattened row-major.
pub fn cell_of(kp: &Keypoint, image: (u32, u32), grid: (usize, usize)) -> usize {
    let (img_w, img_h) = (image.0 as f64, image.1 as f64);
    let (h, w) = grid;
    let bin = |v: f64, extent: f64, n: usize| -> usize {
        let b = (v / extent * n as f64).floor();
        if b < 0.0 {
            0
        } else {
            (b as usize).min(n - 1)
        }
    };
    bin(kp.y, img_h, h) * w + bin(kp.x, img_w, w)
}

/// Coordinates of one applied edit and its keypoint agreement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRegion {
    pub query_cell: (usize, usize),
    pub distractor_id: String,
    pub distractor_cell: (usize, usize),
    /// Both cells contain at least one visible keypoint.
    pub near_kp: bool,
    /// The two cells share a visible part id.
    pub same_kp: bool,
}

/// A search result annotated with per-edit regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    #[serde(flatten)]
    pub result: CounterfactualResult,
    pub regions: Vec<EditRegion>,
}

impl InstanceRecord {
    pub fn annotate(result: CounterfactualResult, bundle: &TensorBundle) -> Self {
        let grid = result.grid;
        let parts = |kp: &Option<crate::metrics::KeypointSet>| match kp {
            Some(k) => k.cell_parts(grid),
            None => CellParts::empty(grid.0 * grid.1),
        };
        let query_parts = parts(&bundle.query.keypoints);
        let distractor_parts: Vec<CellParts> =
            bundle.distractors.iter().map(|d| parts(&d.keypoints)).collect();
        let regions = result
            .edits
            .iter()
            .map(|e| {
                let qp = query_parts.parts(e.query_cell);
                let dp = distractor_parts[e.distractor].parts(e.distractor_cell);
                EditRegion {
                    query_cell: (e.query_cell / grid.1, e.query_cell % grid.1),
                    distractor_id: bundle.distractors[e.distractor].id.clone(),
                    distractor_cell: (e.distractor_cell / grid.1, e.distractor_cell % grid.1),
                    near_kp: !qp.is_empty() && !dp.is_empty(),
                    same_kp: !qp.is_disjoint(dp),
                }
            })
            .collect();
        Self { result, regions }
    }

    pub fn flipped(&self) -> bool {
        self.result.status == Status::Flipped
    }

    pub fn apd(&self) -> Option<f64> {
        apd(&self.result.trace).ok()
    }
}

/// Which edits the keypoint metrics look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// First edit of every instance that made one, flipped or not.
    Single,
    /// Every edit of flipped instances.
    All,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(EvalMode::Single),
            "all" => Ok(EvalMode::All),
            other => Err(Error::Argument(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

fn selected_regions(records: &[InstanceRecord], mode: EvalMode) -> Vec<&EditRegion> {
    match mode {
        EvalMode::Single => records.iter().filter_map(|r| r.regions.first()).collect(),
        EvalMode::All => records
            .iter()
            .filter(|r| r.flipped())
            .flat_map(|r| r.regions.iter())
            .collect(),
    }
}

fn fraction<'a>(regions: impl IntoIterator<Item = &'a EditRegion>, hit: fn(&EditRegion) -> bool) -> f64 {
    let (mut n, mut k) = (0usize, 0usize);
    for r in regions {
        n += 1;
        k += hit(r) as usize;
    }
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

pub fn near_kp(records: &[InstanceRecord], mode: EvalMode) -> f64 {
    fraction(selected_regions(records, mode), |r| r.near_kp)
}

pub fn same_kp(records: &[InstanceRecord], mode: EvalMode) -> f64 {
    fraction(selected_regions(records, mode), |r| r.same_kp)
}

/// Mean per-edit change of the counterfactual-class probability.
pub fn apd(trace: &[f64]) -> Result<f64> {
    if trace.len() < 2 {
        return Err(Error::UndefinedMetric("APD needs at least one edit".into()));
    }
    let n = trace.len() - 1;
    let total: f64 = trace.windows(2).map(|w| w[1] - w[0]).sum();
    Ok(total / n as f64)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub instances: usize,
    /// Instances whose prediction flipped.
    pub n_cfs: usize,
    pub near_kp: f64,
    pub same_kp: f64,
    /// Mean edit count over flipped instances.
    pub mean_edits: Option<f64>,
    /// Mean APD over flipped instances.
    pub apd: Option<f64>,
    pub mean_evaluations: f64,
    pub total_time_ms: f64,
    pub time_per_instance_ms: f64,
    /// Mean of `T_Es / T_E` over instances that reached the search.
    pub reduction_ratio: Option<f64>,
    /// Mean `T_Es` over instances that reached the search.
    pub mean_candidates: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut n, mut s) = (0usize, 0.0);
    for v in values {
        n += 1;
        s += v;
    }
    (n > 0).then(|| s / n as f64)
}

pub fn report(records: &[InstanceRecord], mode: EvalMode) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::NoResults);
    }
    let mut sorted: Vec<&InstanceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.result.instance_id, a.result.method.as_str())
            .cmp(&(&b.result.instance_id, b.result.method.as_str()))
    });
    let owned: Vec<InstanceRecord> = sorted.iter().map(|r| (*r).clone()).collect();
    let flipped: Vec<&InstanceRecord> = owned.iter().filter(|r| r.flipped()).collect();
    let total_ms: f64 = owned
        .iter()
        .map(|r| r.result.wall_time.as_secs_f64() * 1e3)
        .sum();
    Ok(MetricsReport {
        mode,
        instances: owned.len(),
        n_cfs: flipped.len(),
        near_kp: near_kp(&owned, mode),
        same_kp: same_kp(&owned, mode),
        mean_edits: mean(flipped.iter().map(|r| r.result.edits.len() as f64)),
        apd: mean(flipped.iter().filter_map(|r| r.apd())),
        mean_evaluations: mean(owned.iter().map(|r| r.result.evaluations as f64)).unwrap_or(0.0),
        total_time_ms: total_ms,
        time_per_instance_ms: total_ms / owned.len() as f64,
        reduction_ratio: mean(
            owned
                .iter()
                .filter_map(|r| r.result.universe.map(|u| u.reduction_ratio())),
        ),
        mean_candidates: mean(
            owned
                .iter()
                .filter_map(|r| r.result.universe.map(|u| u.t_es as f64)),
        ),
    })
}

pub const INSTANCE_CSV_HEADER: [&str; 8] = [
    "instance_id",
    "status",
    "n_edits",
    "apd",
    "time_ms",
    "evaluations",
    "near_kp",
    "same_kp",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Per-instance rows, sorted by instance id.
pub fn write_instances_csv<W: Write>(records: &[InstanceRecord], out: W) -> Result<()> {
    let mut sorted: Vec<&InstanceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.result.instance_id.cmp(&b.result.instance_id));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INSTANCE_CSV_HEADER)?;
    for r in sorted {
        let regions = &r.regions;
        let frac = |hit: fn(&EditRegion) -> bool| {
            (!regions.is_empty()).then(|| fraction(regions.iter(), hit))
        };
        w.write_record([
            r.result.instance_id.clone(),
            r.result.status.as_str().to_string(),
            r.result.edits.len().to_string(),
            opt(r.apd()),
            format!("{:.3}", r.result.wall_time.as_secs_f64() * 1e3),
            r.result.evaluations.to_string(),
            opt(frac(|x| x.near_kp)),
            opt(frac(|x| x.same_kp)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
