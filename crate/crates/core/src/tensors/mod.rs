//! Dense feature tensors, grid maps and the numeric kernels shared by the
//! rest of the engine.
//!
//! A [`FeatureMap`] is an `H × W × d` array stored row-major as
//! `(row, col, channel)`; a cell index is `row * W + col`. A [`GridMap`] is a
//! single-channel `H × W` plane used for masks and attribution maps.

mod format;
mod kernels;

pub use format::{
    decode, encode, read_feature_map, read_grid_map, read_raw, read_tensor, write_feature_map,
    write_grid_map, write_raw, RawTensor, Tensor, MAGIC,
};
pub use kernels::{binarize, bilinear_resize, cell_dot, dot, masked_softmax};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Argument(format!(
                "feature map dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::Argument(format!(
                "feature map {height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite feature value at {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial cells, `H·W`.
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The `d`-vector stored at flattened cell `index`.
    ///
    /// Panics when `index >= H·W`; use [`FeatureMap::try_cell`] for checked access.
    pub fn cell(&self, index: usize) -> &[f32] {
        let start = index * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn try_cell(&self, index: usize) -> Result<&[f32]> {
        if index >= self.cells() {
            return Err(Error::Argument(format!(
                "cell index {index} out of range for {} cells",
                self.cells()
            )));
        }
        Ok(self.cell(index))
    }

    pub(crate) fn set_cell(&mut self, index: usize, values: &[f32]) {
        let start = index * self.channels;
        self.data[start..start + self.channels].copy_from_slice(values);
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GridMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "grid dims must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Argument(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite grid value at {pos}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Flattened indices of non-zero cells in ascending order.
    pub fn nonzero_indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Elementwise product with another map of the same dims.
    pub fn hadamard(&self, other: &GridMap) -> Result<GridMap> {
        if self.dims() != other.dims() {
            return Err(Error::Argument(format!(
                "hadamard of {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        GridMap::new(self.height, self.width, data)
    }
}
