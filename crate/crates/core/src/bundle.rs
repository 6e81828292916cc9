//! Counterfactual instances on disk: a JSON manifest that points at CFT1
//! tensors and keypoint files, all paths relative to the manifest.
//!
//! ```json
//! {
//!   "query": {"id": "q", "class": 2, "features": "q.cft", "mask": "q.mask.cft", "keypoints": "q.kp.json"},
//!   "distractors": [{"id": "d0", "class": 4, "features": "d0.cft", "mask": "d0.mask.cft", "keypoints": "d0.kp.json"}],
//!   "head": "head.cft",
//!   "grid": {"H": 7, "W": 7, "d": 2048},
//!   "classes": 200
//! }
//! ```
//!
//! Optional keys: `counterfactual_class` (defaults to the distractors' class),
//! `class_weights` (a `[C, d]` tensor; defaults to the head weights) and
//! `mask_fallback` (set by exporters that substituted a full mask).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::attribution::ChannelClassWeights;
use crate::error::{Error, Result};
use crate::metrics::KeypointSet;
use crate::search::ClassifierHead;
use crate::tensors::{
    read_feature_map, read_grid_map, read_raw, write_feature_map, write_grid_map, write_raw,
    FeatureMap, GridMap, RawTensor,
};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub class: usize,
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub query: ImageEntry,
    pub distractors: Vec<ImageEntry>,
    pub head: PathBuf,
    pub grid: GridSpec,
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub mask_fallback: bool,
}

/// One image of an instance with everything the engine needs from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub class: usize,
    pub features: FeatureMap,
    /// Segmentation mask at image or grid resolution; `None` means the whole image.
    pub mask: Option<GridMap>,
    pub keypoints: Option<KeypointSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle {
    pub query: ImageRecord,
    pub distractors: Vec<ImageRecord>,
    pub head: ClassifierHead,
    pub class_weights: ChannelClassWeights,
    pub counterfactual_class: usize,
    pub mask_fallback: bool,
}

impl TensorBundle {
    pub fn id(&self) -> &str {
        &self.query.id
    }

    pub fn grid(&self) -> (usize, usize) {
        self.query.features.grid()
    }

    pub fn distractor_features(&self) -> Vec<FeatureMap> {
        self.distractors.iter().map(|d| d.features.clone()).collect()
    }

    /// Every violated invariant, one message each. Empty when the bundle is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let q = &self.query.features;
        let classes = self.head.classes();
        if self.distractors.is_empty() {
            out.push("no distractors".to_string());
        }
        for image in std::iter::once(&self.query).chain(&self.distractors) {
            if !image.features.same_shape(q) {
                out.push(format!(
                    "{}: features {}x{}x{} differ from query {}x{}x{}",
                    image.id,
                    image.features.height(),
                    image.features.width(),
                    image.features.channels(),
                    q.height(),
                    q.width(),
                    q.channels()
                ));
            }
            if image.class >= classes {
                out.push(format!("{}: class {} >= {classes}", image.id, image.class));
            }
            if let (Some(mask), Some(kp)) = (&image.mask, &image.keypoints) {
                let image_dims = (kp.height as usize, kp.width as usize);
                if mask.dims() != q.grid() && mask.dims() != image_dims {
                    out.push(format!(
                        "{}: mask {:?} matches neither grid {:?} nor image {:?}",
                        image.id,
                        mask.dims(),
                        q.grid(),
                        image_dims
                    ));
                }
            }
            if let Some(kp) = &image.keypoints {
                if let Err(e) = kp.validate() {
                    out.push(format!("{}: {e}", image.id));
                }
            }
        }
        if self.head.channels() != q.channels() {
            out.push(format!(
                "head has {} channels, features {}",
                self.head.channels(),
                q.channels()
            ));
        }
        if self.class_weights.channels() != q.channels() || self.class_weights.classes() != classes
        {
            out.push(format!(
                "class weights are {}x{}, expected {classes}x{}",
                self.class_weights.classes(),
                self.class_weights.channels(),
                q.channels()
            ));
        }
        if self.counterfactual_class >= classes {
            out.push(format!(
                "counterfactual class {} >= {classes}",
                self.counterfactual_class
            ));
        }
        if self.counterfactual_class == self.query.class {
            out.push("counterfactual class equals query class".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().first() {
            None => Ok(()),
            Some(p) => Err(Error::Argument(format!("{}: {p}", self.id()))),
        }
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            reason,
        };

        let head = ClassifierHead::from_raw(&read_raw(base.join(&manifest.head))?)?;
        if head.classes() != manifest.classes {
            return Err(bad(format!(
                "head has {} classes, manifest declares {}",
                head.classes(),
                manifest.classes
            )));
        }
        let class_weights = match &manifest.class_weights {
            Some(p) => {
                let raw = read_raw(base.join(p))?;
                match raw.dims.as_slice() {
                    &[c, d] => ChannelClassWeights::new(c, d, raw.data)?,
                    dims => return Err(bad(format!("class weights dims {dims:?}"))),
                }
            }
            None => ChannelClassWeights::from_head(&head),
        };

        let load_image = |entry: &ImageEntry| -> Result<ImageRecord> {
            let features = read_feature_map(base.join(&entry.features))?;
            let g = &manifest.grid;
            if (features.height(), features.width(), features.channels()) != (g.height, g.width, g.d)
            {
                return Err(bad(format!(
                    "{}: features {}x{}x{} differ from grid {}x{}x{}",
                    entry.id,
                    features.height(),
                    features.width(),
                    features.channels(),
                    g.height,
                    g.width,
                    g.d
                )));
            }
            let mask = entry
                .mask
                .as_ref()
                .map(|p| read_grid_map(base.join(p)))
                .transpose()?;
            let keypoints = entry
                .keypoints
                .as_ref()
                .map(|p| KeypointSet::load(base.join(p)))
                .transpose()?;
            Ok(ImageRecord {
                id: entry.id.clone(),
                class: entry.class,
                features,
                mask,
                keypoints,
            })
        };

        let query = load_image(&manifest.query)?;
        let distractors = manifest
            .distractors
            .iter()
            .map(load_image)
            .collect::<Result<Vec<_>>>()?;
        let counterfactual_class = match manifest.counterfactual_class {
            Some(c) => c,
            None => {
                let first = distractors
                    .first()
                    .ok_or_else(|| bad("no distractors".into()))?
                    .class;
                if distractors.iter().any(|d| d.class != first) {
                    return Err(bad(
                        "distractors disagree on class and no counterfactual_class given".into(),
                    ));
                }
                first
            }
        };
        let bundle = TensorBundle {
            query,
            distractors,
            head,
            class_weights,
            counterfactual_class,
            mask_fallback: manifest.mask_fallback,
        };
        if let Some(p) = bundle.problems().first() {
            return Err(bad(p.clone()));
        }
        Ok(bundle)
    }

    /// Write the bundle into `dir` (created if missing) and return the manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let save_image = |image: &ImageRecord, stem: &str| -> Result<ImageEntry> {
            let features = PathBuf::from(format!("{stem}.features.cft"));
            write_feature_map(dir.join(&features), &image.features)?;
            let mask = match &image.mask {
                Some(m) => {
                    let p = PathBuf::from(format!("{stem}.mask.cft"));
                    write_grid_map(dir.join(&p), m)?;
                    Some(p)
                }
                None => None,
            };
            let keypoints = match &image.keypoints {
                Some(k) => {
                    let p = PathBuf::from(format!("{stem}.keypoints.json"));
                    k.save(dir.join(&p))?;
                    Some(p)
                }
                None => None,
            };
            Ok(ImageEntry {
                id: image.id.clone(),
                class: image.class,
                features,
                mask,
                keypoints,
            })
        };
        let query = save_image(&self.query, "query")?;
        let distractors = self
            .distractors
            .iter()
            .enumerate()
            .map(|(k, d)| save_image(d, &format!("distractor{k:02}")))
            .collect::<Result<Vec<_>>>()?;
        let head = PathBuf::from("head.cft");
        write_raw(dir.join(&head), &self.head.to_raw())?;
        let class_weights = if self.class_weights == ChannelClassWeights::from_head(&self.head) {
            None
        } else {
            let p = PathBuf::from("class_weights.cft");
            write_raw(
                dir.join(&p),
                &RawTensor {
                    dims: vec![self.class_weights.classes(), self.class_weights.channels()],
                    data: self.class_weights.data().to_vec(),
                },
            )?;
            Some(p)
        };
        let (h, w) = self.grid();
        let manifest = Manifest {
            query,
            distractors,
            head,
            grid: GridSpec {
                height: h,
                width: w,
                d: self.query.features.channels(),
            },
            classes: self.head.classes(),
            counterfactual_class: Some(self.counterfactual_class),
            class_weights,
            mask_fallback: self.mask_fallback,
        };
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Manifest files under `dir` (`manifest.json` or `*.manifest.json`), sorted.
pub fn discover_manifests(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut found = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        let name = entry.file_name().to_string_lossy();
        if entry.file_type().is_file()
            && (name == MANIFEST_NAME || name.ends_with(".manifest.json"))
        {
            found.push(entry.into_path());
        }
    }
    found.sort();
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Keypoint;

    fn bundle() -> TensorBundle {
        let head = ClassifierHead::new(3, 2, vec![1., 0., 0., 1., 0.5, 0.5], vec![0.; 3]).unwrap();
        let image = |id: &str, class: usize, v: f32| ImageRecord {
            id: id.into(),
            class,
            features: FeatureMap::new(2, 2, 2, vec![v; 8]).unwrap(),
            mask: Some(GridMap::filled(8, 8, 1.0).unwrap()),
            keypoints: Some(KeypointSet {
                width: 8,
                height: 8,
                points: vec![Keypoint {
                    part: "beak".into(),
                    x: 1.0,
                    y: 2.0,
                    visible: true,
                }],
            }),
        };
        TensorBundle {
            query: image("q", 0, 1.0),
            distractors: vec![image("d0", 1, 2.0), image("d1", 1, 3.0)],
            class_weights: ChannelClassWeights::from_head(&head),
            head,
            counterfactual_class: 1,
            mask_fallback: false,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle();
        let path = b.save(dir.path().join("inst")).unwrap();
        let back = TensorBundle::load(&path).unwrap();
        assert_eq!(back, b);
        assert_eq!(discover_manifests(dir.path()).unwrap(), vec![path]);
    }

    #[test]
    fn counterfactual_class_defaults_to_distractors() {
        let dir = tempfile::tempdir().unwrap();
        let path = bundle().save(dir.path()).unwrap();
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m.counterfactual_class = None;
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(TensorBundle::load(&path).unwrap().counterfactual_class, 1);

        m.distractors[1].class = 2;
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(TensorBundle::load(&path), Err(Error::Manifest { .. })));
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut b = bundle();
        b.distractors[0].features = FeatureMap::zeros(3, 2, 2).unwrap();
        b.distractors[1].mask = Some(GridMap::filled(5, 5, 1.0).unwrap());
        let problems = b.problems();
        assert_eq!(problems.len(), 2, "{problems:?}");
    }

    #[test]
    fn missing_tensor_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = bundle().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("head.cft")).unwrap();
        assert!(matches!(TensorBundle::load(&path), Err(Error::Io { .. })));
    }
}
