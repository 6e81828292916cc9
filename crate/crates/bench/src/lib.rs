//! Fixtures shared by the benchmarks.

use cfedit_core::synthetic::{generate, SyntheticConfig};
use cfedit_core::TensorBundle;

/// Planted instances on an `h × w` grid with `n` distractors.
pub fn planted(h: usize, w: usize, n: usize, count: usize) -> Vec<TensorBundle> {
    generate(&SyntheticConfig {
        seed: 1,
        count,
        height: h,
        width: w,
        channels: 32,
        classes: 10,
        distractors: n,
        planted: true,
        mask_density: Some(0.5),
        margin: (8.0, 12.0),
        ..SyntheticConfig::default()
    })
    .expect("planted fixture")
}

/// Instances that usually need several edits.
pub fn multi_edit(h: usize, w: usize, n: usize, count: usize) -> Vec<TensorBundle> {
    generate(&SyntheticConfig {
        seed: 2,
        count,
        height: h,
        width: w,
        channels: 32,
        classes: 10,
        distractors: n,
        margin: (2.0, 6.0),
        ..SyntheticConfig::default()
    })
    .expect("multi-edit fixture")
}
