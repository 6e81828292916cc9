//! Class attribution maps and the weighted semantic map.
//!
//! The attribution of class `c` at a cell is `relu(Σ_k relu(b[c,k]) · f[cell,k])`.
//! The weighted semantic map keeps that value inside the query's segmentation
//! mask and zeroes it everywhere else.

use crate::error::{Error, Result};
use crate::search::ClassifierHead;
use crate::tensors::{bilinear_resize, binarize, FeatureMap, GridMap};

/// Per-(class, channel) attribution weights, a `C × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelClassWeights {
    classes: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ChannelClassWeights {
    pub fn new(classes: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if classes == 0 || channels == 0 || data.len() != classes * channels {
            return Err(Error::Argument(format!(
                "class weights {classes}x{channels} got {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite class weight".into()));
        }
        Ok(Self {
            classes,
            channels,
            data,
        })
    }

    /// For a pooled-affine head the class weights are the head's weight rows.
    pub fn from_head(head: &ClassifierHead) -> Self {
        Self {
            classes: head.classes(),
            channels: head.channels(),
            data: head.weights().to_vec(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.data[class * self.channels..(class + 1) * self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Non-negative `H × W` class attribution map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap(GridMap);

impl AttributionMap {
    pub fn uniform(height: usize, width: usize) -> Result<Self> {
        Ok(Self(GridMap::filled(height, width, 1.0)?))
    }

    pub fn map(&self) -> &GridMap {
        &self.0
    }
}

/// Attribution restricted to the semantic region, together with the binarized
/// mask that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSemanticMap {
    values: GridMap,
    mask: GridMap,
}

impl WeightedSemanticMap {
    pub fn values(&self) -> &GridMap {
        &self.values
    }

    pub fn mask(&self) -> &GridMap {
        &self.mask
    }
}

pub fn compute_attribution(
    features: &FeatureMap,
    weights: &ChannelClassWeights,
    class: usize,
) -> Result<AttributionMap> {
    if class >= weights.classes() {
        return Err(Error::Argument(format!(
            "class {class} out of range for {} classes",
            weights.classes()
        )));
    }
    if features.channels() != weights.channels() {
        return Err(Error::Argument(format!(
            "class weights have {} channels, features {}",
            weights.channels(),
            features.channels()
        )));
    }
    let gates: Vec<f64> = weights
        .row(class)
        .iter()
        .map(|&b| (b as f64).max(0.0))
        .collect();
    let data = (0..features.cells())
        .map(|i| {
            let s: f64 = features
                .cell(i)
                .iter()
                .zip(&gates)
                .map(|(&a, &g)| g * a as f64)
                .sum();
            s.max(0.0) as f32
        })
        .collect();
    Ok(AttributionMap(GridMap::new(
        features.height(),
        features.width(),
        data,
    )?))
}

/// Resize `mask` onto the attribution grid, binarize it at `threshold`, and
/// take the Hadamard product with the attribution.
pub fn weighted_semantic_map(
    mask: &GridMap,
    attribution: &AttributionMap,
    threshold: f32,
) -> Result<WeightedSemanticMap> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Argument(format!(
            "segmentation threshold {threshold} outside [0, 1)"
        )));
    }
    let (h, w) = attribution.0.dims();
    let binary = grid_mask(mask, h, w, threshold)?;
    let active = binary.nonzero_indices().len();
    if active == 0 {
        return Err(Error::DegenerateMask { cells: h * w });
    }
    Ok(WeightedSemanticMap {
        values: binary.hadamard(&attribution.0)?,
        mask: binary,
    })
}

/// A segmentation mask resampled to `height × width` and binarized.
pub fn grid_mask(mask: &GridMap, height: usize, width: usize, threshold: f32) -> Result<GridMap> {
    Ok(binarize(&bilinear_resize(mask, height, width)?, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn weights(row: &[f32]) -> ChannelClassWeights {
        ChannelClassWeights::new(1, row.len(), row.to_vec()).unwrap()
    }

    #[test]
    fn zero_features_give_zero_map() {
        let f = FeatureMap::zeros(2, 2, 3).unwrap();
        let m = compute_attribution(&f, &weights(&[1.0, 2.0, 3.0]), 0).unwrap();
        assert!(m.map().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_weights_are_gated_off() {
        let f = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = compute_attribution(&f, &weights(&[-1.0, -0.5]), 0).unwrap();
        assert!(m.map().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inner_and_outer_relu() {
        let f = FeatureMap::new(1, 1, 2, vec![2.0, -3.0]).unwrap();
        // relu(0.5·2 + 10·(−3)) = 0
        let m = compute_attribution(&f, &weights(&[0.5, 10.0]), 0).unwrap();
        assert_eq!(m.map().data(), &[0.0]);
        // relu(0.5·2 + relu(−10)·(−3)) = 1
        let m = compute_attribution(&f, &weights(&[0.5, -10.0]), 0).unwrap();
        assert_eq!(m.map().data(), &[1.0]);
    }

    #[test]
    fn class_out_of_range() {
        let f = FeatureMap::zeros(1, 1, 2).unwrap();
        assert!(matches!(
            compute_attribution(&f, &weights(&[1.0, 1.0]), 1),
            Err(Error::Argument(_))
        ));
    }

    fn attribution(values: Vec<f32>) -> AttributionMap {
        AttributionMap(GridMap::new(2, 2, values).unwrap())
    }

    #[test]
    fn full_mask_is_identity() {
        let a = attribution(vec![1.0, 2.0, 3.0, 4.0]);
        let s = weighted_semantic_map(&GridMap::filled(8, 8, 1.0).unwrap(), &a, 0.5).unwrap();
        assert_eq!(s.values(), a.map());
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let a = attribution(vec![1.0, 2.0, 3.0, 4.0]);
        let err = weighted_semantic_map(&GridMap::filled(2, 2, 0.0).unwrap(), &a, 0.5);
        assert!(matches!(err, Err(Error::DegenerateMask { cells: 4 })));
    }

    #[test]
    fn diagonal_mask() {
        let a = attribution(vec![1.0, 2.0, 3.0, 4.0]);
        let mask = GridMap::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = weighted_semantic_map(&mask, &a, 0.5).unwrap();
        assert_eq!(s.values().data(), &[1.0, 0.0, 0.0, 4.0]);
    }

    proptest! {
        #[test]
        fn nonnegative_and_contained(
            feats in prop::collection::vec(-5.0f32..5.0, 9 * 3),
            row in prop::collection::vec(-2.0f32..2.0, 3),
            mask in prop::collection::vec(0.0f32..1.0, 9),
            scale in 0.1f32..10.0,
        ) {
            let f = FeatureMap::new(3, 3, 3, feats.clone()).unwrap();
            let w = weights(&row);
            let m = compute_attribution(&f, &w, 0).unwrap();
            prop_assert!(m.map().data().iter().all(|&v| v >= 0.0));

            let scaled = FeatureMap::new(3, 3, 3, feats.iter().map(|v| v * scale).collect()).unwrap();
            let ms = compute_attribution(&scaled, &w, 0).unwrap();
            for (a, b) in m.map().data().iter().zip(ms.map().data()) {
                prop_assert!((a * scale - b).abs() <= 1e-4 * (1.0 + b.abs()));
            }

            let mask = GridMap::new(3, 3, mask).unwrap();
            if let Ok(s) = weighted_semantic_map(&mask, &m, 0.5) {
                for i in 0..9 {
                    let v = s.values().data()[i];
                    prop_assert!(v >= 0.0);
                    if s.mask().data()[i] == 0.0 {
                        prop_assert_eq!(v, 0.0);
                    } else {
                        prop_assert_eq!(v, m.map().data()[i]);
                    }
                }
            }
        }
    }
}
