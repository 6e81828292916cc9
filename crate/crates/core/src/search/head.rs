use crate::error::{Error, Result};
use crate::tensors::{FeatureMap, RawTensor};

/// Pooled-affine classifier: spatial mean over cells, then `W·x + b`, then softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    classes: usize,
    channels: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ClassifierHead {
    pub fn new(classes: usize, channels: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if classes == 0 || channels == 0 {
            return Err(Error::Argument("head needs at least one class and channel".into()));
        }
        if weights.len() != classes * channels || bias.len() != classes {
            return Err(Error::Argument(format!(
                "head {classes}x{channels} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite head parameter".into()));
        }
        Ok(Self {
            classes,
            channels,
            weights,
            bias,
        })
    }

    /// Decode a `[C, d + 1]` tensor whose last column is the bias.
    pub fn from_raw(raw: &RawTensor) -> Result<Self> {
        let (classes, cols) = match raw.dims.as_slice() {
            &[c, cols] if cols >= 2 => (c, cols),
            dims => {
                return Err(Error::format(
                    "head.dims",
                    format!("expected [C, d+1] with d >= 1, got {dims:?}"),
                ))
            }
        };
        let channels = cols - 1;
        let mut weights = Vec::with_capacity(classes * channels);
        let mut bias = Vec::with_capacity(classes);
        for row in raw.data.chunks_exact(cols) {
            weights.extend_from_slice(&row[..channels]);
            bias.push(row[channels]);
        }
        Self::new(classes, channels, weights, bias)
    }

    pub fn to_raw(&self) -> RawTensor {
        let mut data = Vec::with_capacity(self.classes * (self.channels + 1));
        for c in 0..self.classes {
            data.extend_from_slice(self.weight_row(c));
            data.push(self.bias[c]);
        }
        RawTensor {
            dims: vec![self.classes, self.channels + 1],
            data,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weight_row(&self, class: usize) -> &[f32] {
        &self.weights[class * self.channels..(class + 1) * self.channels]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    fn check(&self, features: &FeatureMap) -> Result<()> {
        if features.channels() != self.channels {
            return Err(Error::Argument(format!(
                "head expects {} channels, features have {}",
                self.channels,
                features.channels()
            )));
        }
        Ok(())
    }

    /// Per-channel sum over all cells, accumulated in f64.
    pub fn pooled_sum(&self, features: &FeatureMap) -> Result<Vec<f64>> {
        self.check(features)?;
        let mut sum = vec![0.0f64; self.channels];
        for cell in features.data().chunks_exact(self.channels) {
            for (s, &v) in sum.iter_mut().zip(cell) {
                *s += v as f64;
            }
        }
        Ok(sum)
    }

    /// Logits from a per-channel cell sum over `cells` cells.
    pub fn logits_from_sum(&self, sum: &[f64], cells: usize) -> Vec<f64> {
        let n = cells as f64;
        (0..self.classes)
            .map(|c| {
                let dot: f64 = self
                    .weight_row(c)
                    .iter()
                    .zip(sum)
                    .map(|(&w, &s)| w as f64 * (s / n))
                    .sum();
                dot + self.bias[c] as f64
            })
            .collect()
    }

    pub fn logits(&self, features: &FeatureMap) -> Result<Vec<f64>> {
        let sum = self.pooled_sum(features)?;
        Ok(self.logits_from_sum(&sum, features.cells()))
    }

    /// Class probabilities for a feature map.
    pub fn classify(&self, features: &FeatureMap) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(features)?))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(bias: Vec<f32>) -> ClassifierHead {
        let c = bias.len();
        ClassifierHead::new(c, 2, vec![0.5; c * 2], bias).unwrap()
    }

    #[test]
    fn zero_features_zero_bias_is_uniform() {
        let h = head(vec![0.0; 4]);
        let p = h.classify(&FeatureMap::zeros(2, 2, 2).unwrap()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn bias_only_matches_scalar_softmax() {
        let h = head(vec![10.0, 0.0]);
        let p = h.classify(&FeatureMap::zeros(1, 1, 2).unwrap()).unwrap();
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.99995).abs() < 1e-5);
        assert!((p[1] - 0.00005).abs() < 1e-5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let h = head(vec![0.0, 0.0]);
        assert!(h.classify(&FeatureMap::zeros(1, 1, 3).unwrap()).is_err());
    }

    #[test]
    fn raw_round_trip_keeps_bias_column() {
        let h = ClassifierHead::new(2, 3, vec![1., 2., 3., 4., 5., 6.], vec![-1., 7.]).unwrap();
        let raw = h.to_raw();
        assert_eq!(raw.dims, vec![2, 4]);
        assert_eq!(raw.data, vec![1., 2., 3., -1., 4., 5., 6., 7.]);
        assert_eq!(ClassifierHead::from_raw(&raw).unwrap(), h);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
