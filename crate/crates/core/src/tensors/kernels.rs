use super::{FeatureMap, GridMap};
use crate::error::{Error, Result};

/// Softmax restricted to the non-zero entries of `weights`.
///
/// Entries equal to zero stay exactly zero; the remaining entries are
/// normalized to unit mass.
pub fn masked_softmax(weights: &[f64]) -> Result<Vec<f64>> {
    let max = weights
        .iter()
        .filter(|&&w| w != 0.0)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateInput(
            "masked softmax over an all-zero vector".into(),
        ));
    }
    let mut out: Vec<f64> = weights
        .iter()
        .map(|&w| if w != 0.0 { (w - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel centers.
///
/// Output cell `(r, c)` samples the source at
/// `((r + 0.5)·H/outH − 0.5, (c + 0.5)·W/outW − 0.5)`, clamped to the grid.
pub fn bilinear_resize(map: &GridMap, out_height: usize, out_width: usize) -> Result<GridMap> {
    if out_height == 0 || out_width == 0 {
        return Err(Error::Argument(format!(
            "resize target must be positive, got {out_height}x{out_width}"
        )));
    }
    let (h, w) = map.dims();
    if (h, w) == (out_height, out_width) {
        return Ok(map.clone());
    }
    let rows: Vec<(usize, usize, f64)> = sample_axis(h, out_height);
    let cols: Vec<(usize, usize, f64)> = sample_axis(w, out_width);
    let mut data = Vec::with_capacity(out_height * out_width);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let top = (1.0 - fx) * map.get(y0, x0) as f64 + fx * map.get(y0, x1) as f64;
            let bottom = (1.0 - fx) * map.get(y1, x0) as f64 + fx * map.get(y1, x1) as f64;
            data.push(((1.0 - fy) * top + fy * bottom) as f32);
        }
    }
    GridMap::new(out_height, out_width, data)
}

fn sample_axis(len: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = len as f64 / out as f64;
    let last = (len - 1) as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor();
            let i0 = lo as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - lo)
        })
        .collect()
}

/// Threshold a map to {0, 1}: values strictly above `threshold` become 1.
pub fn binarize(map: &GridMap, threshold: f32) -> GridMap {
    let data = map
        .data()
        .iter()
        .map(|&v| if v > threshold { 1.0 } else { 0.0 })
        .collect();
    GridMap::new(map.height(), map.width(), data).expect("same dims as a valid map")
}

/// Dot product of cell `i` of `a` with cell `j` of `b`.
pub fn cell_dot(a: &FeatureMap, i: usize, b: &FeatureMap, j: usize) -> Result<f64> {
    if a.channels() != b.channels() {
        return Err(Error::Argument(format!(
            "channel mismatch: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    Ok(dot(a.try_cell(i)?, b.try_cell(j)?))
}

pub fn dot(x: &[f32], y: &[f32]) -> f64 {
    x.iter().zip(y).map(|(&p, &q)| p as f64 * q as f64).sum()
}
