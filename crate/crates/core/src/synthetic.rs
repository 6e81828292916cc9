//! Seeded synthetic instances for testing and benchmarking.
//!
//! Features are nonnegative, like post-ReLU backbone activations. The head
//! reads class `k` mostly from channel `k`; channels beyond the class count
//! are "part" channels that carry similarity structure but little class
//! evidence. Query cells are uniform noise; distractor cells carry extra
//! evidence for the counterfactual class. Biases are chosen per instance so
//! the query starts out predicted as its own class with a margin, measured in
//! units of `1/HW` (the pooled-mean weight of a single cell), over the
//! counterfactual class.
//!
//! In planted mode one query cell carries most of the query-class evidence
//! (and therefore the highest attribution) and one distractor cell carries a
//! strong counterfactual signal; the two share a part vector, so the pair is
//! also the most similar one. Replacing that query cell with that distractor
//! cell flips the prediction, which is checked by brute force.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::ChannelClassWeights;
use crate::bundle::{ImageRecord, TensorBundle};
use crate::error::{Error, Result};
use crate::metrics::{Keypoint, KeypointSet};
use crate::search::{argmax, ClassifierHead, EditState};
use crate::similarity::CandidatePair;
use crate::tensors::{FeatureMap, GridMap};

const PART_NAMES: [&str; 10] = [
    "beak", "crown", "eye", "throat", "breast", "wing", "back", "belly", "leg", "tail",
];
const PLANT_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub distractors: usize,
    pub planted: bool,
    /// Per-cell foreground probability of the masks; `None` writes no masks.
    pub mask_density: Option<f64>,
    /// Range of the initial query-vs-counterfactual logit margin, in units of `1/HW`.
    pub margin: (f64, f64),
    /// Visible keypoints per image.
    pub keypoints: usize,
    /// Image pixels per grid cell along each axis.
    pub cell_px: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 10,
            height: 4,
            width: 4,
            channels: 8,
            classes: 5,
            distractors: 2,
            planted: false,
            mask_density: None,
            margin: (2.0, 8.0),
            keypoints: 3,
            cell_px: 16,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let arg = |m: &str| Err(Error::Argument(m.to_string()));
        if self.height == 0 || self.width == 0 || self.cell_px == 0 {
            return arg("grid and cell sizes must be positive");
        }
        if self.classes < 2 {
            return arg("need at least two classes");
        }
        if self.channels < self.classes {
            return arg("channels must be at least the number of classes");
        }
        if self.distractors == 0 {
            return arg("need at least one distractor");
        }
        if let Some(p) = self.mask_density {
            if !(p > 0.0 && p <= 1.0) {
                return arg("mask density must be in (0, 1]");
            }
        }
        let (lo, hi) = self.margin;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return arg("margin must satisfy 0 <= lo <= hi");
        }
        if self.keypoints > PART_NAMES.len() {
            return arg("too many keypoints per image");
        }
        Ok(())
    }

    pub fn instance_id(&self, index: usize) -> String {
        format!("syn-{}-{index:05}", self.seed)
    }
}

/// Instance `index` of the suite; independent of `count`.
pub fn generate_instance(config: &SyntheticConfig, index: usize) -> Result<TensorBundle> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    if !config.planted {
        return Ok(draw(config, index, &mut rng, None));
    }
    for _ in 0..PLANT_ATTEMPTS {
        let plant = Plant {
            query_cell: rng.gen_range(0..config.height * config.width),
            distractor: rng.gen_range(0..config.distractors),
            distractor_cell: rng.gen_range(0..config.height * config.width),
        };
        let bundle = draw(config, index, &mut rng, Some(plant));
        let pair = CandidatePair::new(plant.query_cell, plant.distractor, plant.distractor_cell);
        if flips(&bundle, &pair)? {
            return Ok(bundle);
        }
    }
    Err(Error::DegenerateInput(format!(
        "could not plant a single-edit flip in instance {index}"
    )))
}

pub fn generate(config: &SyntheticConfig) -> Result<Vec<TensorBundle>> {
    (0..config.count).map(|i| generate_instance(config, i)).collect()
}

/// Generate the suite into `dir/<instance id>/` and return the manifest paths.
pub fn write_suite(config: &SyntheticConfig, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    config.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..config.count)
        .map(|i| generate_instance(config, i)?.save(dir.join(config.instance_id(i))))
        .collect()
}

/// Whether applying `pair` alone moves the prediction to the counterfactual class.
pub fn flips(bundle: &TensorBundle, pair: &CandidatePair) -> Result<bool> {
    let state = EditState::new(&bundle.query.features).apply_edit(pair, &bundle.distractor_features())?;
    Ok(argmax(&bundle.head.classify(state.features())?) == bundle.counterfactual_class)
}

/// Every single edit over all `HW·n·HW` combinations that flips the prediction.
pub fn single_edit_flips(bundle: &TensorBundle) -> Result<Vec<CandidatePair>> {
    let cells = bundle.query.features.cells();
    let mut out = Vec::new();
    for i in 0..cells {
        for (k, d) in bundle.distractors.iter().enumerate() {
            for j in 0..d.features.cells() {
                let pair = CandidatePair::new(i, k, j);
                if flips(bundle, &pair)? {
                    out.push(pair);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Plant {
    query_cell: usize,
    distractor: usize,
    distractor_cell: usize,
}

fn draw(config: &SyntheticConfig, index: usize, rng: &mut ChaCha8Rng, plant: Option<Plant>) -> TensorBundle {
    let (h, w, d, classes) = (config.height, config.width, config.channels, config.classes);
    let cells = h * w;
    let hw = cells as f32;
    let class = rng.gen_range(0..classes);
    let target = (class + rng.gen_range(1..classes)) % classes;

    let mut weights = vec![0.0f32; classes * d];
    for c in 0..classes {
        for k in 0..d {
            weights[c * d + k] = if k == c { 1.0 } else { rng.gen_range(-0.1..0.1) };
        }
    }

    let margin = rng.gen_range(config.margin.0..=config.margin.1) as f32 / hw;
    let part: Vec<f32> = (classes..d).map(|_| rng.gen_range(2.0..3.0)).collect();

    let mut query: Vec<f32> = (0..cells * d).map(|_| rng.gen::<f32>()).collect();
    let mut distractors: Vec<Vec<f32>> = (0..config.distractors)
        .map(|_| {
            let mut data = Vec::with_capacity(cells * d);
            for _ in 0..cells {
                for k in 0..d {
                    data.push(if k == target {
                        rng.gen_range(0.5..1.5)
                    } else if k < classes {
                        rng.gen_range(0.0..0.5)
                    } else {
                        rng.gen::<f32>()
                    });
                }
            }
            data
        })
        .collect();

    if let Some(p) = plant {
        let alpha = margin * rng.gen_range(0.4..0.7);
        let beta = margin * rng.gen_range(1.05..1.3);
        let q = &mut query[p.query_cell * d..(p.query_cell + 1) * d];
        q[class] = alpha * hw;
        q[classes..].copy_from_slice(&part);
        let x = &mut distractors[p.distractor][p.distractor_cell * d..(p.distractor_cell + 1) * d];
        x[target] = beta * hw;
        x[classes..].copy_from_slice(&part);
    }

    // Bias so that the initial logits are 0 for the query class, -margin for
    // the counterfactual class, and lower still for everything else.
    let mut mean = vec![0.0f64; d];
    for cell in query.chunks_exact(d) {
        for (m, &v) in mean.iter_mut().zip(cell) {
            *m += v as f64 / cells as f64;
        }
    }
    let bias: Vec<f32> = (0..classes)
        .map(|c| {
            let pooled: f64 = (0..d).map(|k| weights[c * d + k] as f64 * mean[k]).sum();
            let goal = if c == class {
                0.0
            } else if c == target {
                -(margin as f64)
            } else {
                -(margin as f64) - rng.gen_range(0.5..2.0)
            };
            (goal - pooled) as f32
        })
        .collect();
    let head = ClassifierHead::new(classes, d, weights, bias).expect("consistent head shape");

    let shared_part = PART_NAMES[rng.gen_range(0..config.keypoints.max(1))];
    let planted_cells = plant.map(|p| (p.query_cell, p.distractor_cell));
    let query_mask = config
        .mask_density
        .map(|p| mask(config, rng, p, plant.map(|x| x.query_cell)));
    let query_kp = keypoints(config, rng, planted_cells.map(|c| (c.0, shared_part)));
    let query = ImageRecord {
        id: config.instance_id(index),
        class,
        features: FeatureMap::new(h, w, d, query).expect("consistent query shape"),
        mask: query_mask,
        keypoints: query_kp,
    };
    let distractors = distractors
        .into_iter()
        .enumerate()
        .map(|(k, data)| {
            let planted_here = plant.filter(|p| p.distractor == k).map(|p| p.distractor_cell);
            let m = config.mask_density.map(|p| mask(config, rng, p, planted_here));
            let kp = keypoints(config, rng, planted_here.map(|c| (c, shared_part)));
            ImageRecord {
                id: format!("{}-d{k:02}", config.instance_id(index)),
                class: target,
                features: FeatureMap::new(h, w, d, data).expect("consistent distractor shape"),
                mask: m,
                keypoints: kp,
            }
        })
        .collect();
    TensorBundle {
        query,
        distractors,
        class_weights: ChannelClassWeights::from_head(&head),
        head,
        counterfactual_class: target,
        mask_fallback: false,
    }
}

/// Random nonempty grid mask, block-upsampled to image resolution.
fn mask(config: &SyntheticConfig, rng: &mut ChaCha8Rng, density: f64, force: Option<usize>) -> GridMap {
    let (h, w, px) = (config.height, config.width, config.cell_px);
    let grid = loop {
        let mut g: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(density)).collect();
        if let Some(c) = force {
            g[c] = true;
        }
        if g.iter().any(|&b| b) {
            break g;
        }
    };
    let mut data = vec![0.0f32; h * px * w * px];
    for (y, row) in data.chunks_exact_mut(w * px).enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            if grid[(y / px) * w + x / px] {
                *v = 1.0;
            }
        }
    }
    GridMap::new(h * px, w * px, data).expect("consistent mask shape")
}

fn keypoints(
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
    forced: Option<(usize, &str)>,
) -> Option<KeypointSet> {
    if config.keypoints == 0 {
        return None;
    }
    let (h, w, px) = (config.height, config.width, config.cell_px);
    let point = |part: &str, cell: usize, visible: bool, rng: &mut ChaCha8Rng| Keypoint {
        part: part.to_string(),
        x: ((cell % w) * px) as f64 + rng.gen_range(0.0..px as f64),
        y: ((cell / w) * px) as f64 + rng.gen_range(0.0..px as f64),
        visible,
    };
    let mut points = Vec::new();
    let mut names: Vec<&str> = PART_NAMES[..config.keypoints].to_vec();
    if let Some((cell, part)) = forced {
        names.retain(|n| *n != part);
        points.push(point(part, cell, true, rng));
    }
    for name in names.into_iter().take(config.keypoints - points.len()) {
        let cell = rng.gen_range(0..h * w);
        points.push(point(name, cell, true, rng));
    }
    let hidden = PART_NAMES[config.keypoints % PART_NAMES.len()];
    let cell = rng.gen_range(0..h * w);
    points.push(point(hidden, cell, false, rng));
    Some(KeypointSet {
        width: (w * px) as u32,
        height: (h * px) as u32,
        points,
    })
}
