//! CFT1 tensor files.
//!
//! Layout (little-endian):
//! - magic: `b"CFT1"`
//! - ndim: u32
//! - dims: ndim × u32
//! - payload: product(dims) × f32, row-major
//!
//! Feature maps are stored as `[H, W, d]`, grid maps as `[H, W]` and the
//! classifier head as `[C, d + 1]`.

use std::fs;
use std::path::Path;

use super::{FeatureMap, GridMap};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFT1";

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// A decoded tensor, discriminated by rank.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Feature(FeatureMap),
    Grid(GridMap),
}

impl From<&FeatureMap> for RawTensor {
    fn from(map: &FeatureMap) -> Self {
        RawTensor {
            dims: vec![map.height(), map.width(), map.channels()],
            data: map.data().to_vec(),
        }
    }
}

impl From<&GridMap> for RawTensor {
    fn from(map: &GridMap) -> Self {
        RawTensor {
            dims: vec![map.height(), map.width()],
            data: map.data().to_vec(),
        }
    }
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        match raw.dims.as_slice() {
            &[h, w, d] => Ok(Tensor::Feature(FeatureMap::new(h, w, d, raw.data)?)),
            &[h, w] => Ok(Tensor::Grid(GridMap::new(h, w, raw.data)?)),
            dims => Err(Error::format(
                "ndim",
                format!("expected rank 2 or 3, got {}", dims.len()),
            )),
        }
    }
}

pub fn encode(tensor: &RawTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * tensor.dims.len() + 4 * tensor.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take_u32(bytes: &[u8], offset: &mut usize, field: &str) -> Result<u32> {
    let end = *offset + 4;
    let chunk = bytes
        .get(*offset..end)
        .ok_or_else(|| Error::format(field, "truncated header"))?;
    *offset = end;
    Ok(u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

pub fn decode(bytes: &[u8]) -> Result<RawTensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format("magic", "expected \"CFT1\""));
    }
    let mut offset = 4;
    let ndim = take_u32(bytes, &mut offset, "ndim")? as usize;
    if ndim == 0 {
        return Err(Error::format("ndim", "must be at least 1"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        let d = take_u32(bytes, &mut offset, &format!("dims[{k}]"))? as usize;
        if d == 0 {
            return Err(Error::format(format!("dims[{k}]"), "must be positive"));
        }
        dims.push(d);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("dims", "element count overflows"))?;
    let payload = &bytes[offset..];
    if payload.len() != count * 4 {
        return Err(Error::format(
            "payload",
            format!(
                "dims {dims:?} declare {count} values but payload holds {} bytes",
                payload.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(Error::format(format!("payload[{i}]"), "non-finite value"));
        }
        data.push(v);
    }
    Ok(RawTensor { dims, data })
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { field, reason } => Error::Format {
            field: format!("{}: {field}", path.display()),
            reason,
        },
        other => other,
    })
}

pub fn write_raw(path: impl AsRef<Path>, tensor: &RawTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_raw(path)?.try_into()
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    match read_tensor(path)? {
        Tensor::Feature(f) => Ok(f),
        Tensor::Grid(_) => Err(Error::format(
            format!("{}: ndim", path.display()),
            "expected a rank-3 feature map",
        )),
    }
}

pub fn read_grid_map(path: impl AsRef<Path>) -> Result<GridMap> {
    let path = path.as_ref();
    match read_tensor(path)? {
        Tensor::Grid(g) => Ok(g),
        Tensor::Feature(_) => Err(Error::format(
            format!("{}: ndim", path.display()),
            "expected a rank-2 grid map",
        )),
    }
}

pub fn write_feature_map(path: impl AsRef<Path>, map: &FeatureMap) -> Result<()> {
    write_raw(path, &RawTensor::from(map))
}

pub fn write_grid_map(path: impl AsRef<Path>, map: &GridMap) -> Result<()> {
    write_raw(path, &RawTensor::from(map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_constant_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.cft");
        let map = FeatureMap::new(2, 2, 3, vec![1.5; 12]).unwrap();
        write_feature_map(&path, &map).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CFT1");
        assert_eq!(bytes.len(), 4 + 4 + 3 * 4 + 12 * 4);
        let back = read_feature_map(&path).unwrap();
        assert_eq!(back, map);
        assert_eq!(encode(&RawTensor::from(&back)), bytes);
    }

    #[test]
    fn short_payload_is_rejected() {
        let mut bytes = encode(&RawTensor {
            dims: vec![4],
            data: vec![1.0, 2.0, 3.0, 4.0],
        });
        bytes.truncate(bytes.len() - 4);
        match decode(&bytes) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "payload"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_single_cell() {
        let map = FeatureMap::new(1, 1, 1, vec![0.0]).unwrap();
        let back: Tensor = decode(&encode(&RawTensor::from(&map)))
            .unwrap()
            .try_into()
            .unwrap();
        assert_eq!(back, Tensor::Feature(map));
    }

    #[test]
    fn bad_magic_and_non_finite() {
        assert!(matches!(
            decode(b"CFT2\x01\0\0\0\x01\0\0\0\0\0\0\0"),
            Err(Error::Format { ref field, .. }) if field == "magic"
        ));
        let bytes = encode(&RawTensor {
            dims: vec![2],
            data: vec![1.0, f32::NAN],
        });
        assert!(matches!(
            decode(&bytes),
            Err(Error::Format { ref field, .. }) if field == "payload[1]"
        ));
    }

    #[test]
    fn zero_dim_rejected() {
        let mut bytes = Vec::from(&MAGIC[..]);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::Format { ref field, .. }) if field == "dims[0]"
        ));
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff))
                .collect();
            let raw = RawTensor { dims, data };
            let bytes = encode(&raw);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back.dims, &raw.dims);
            let same_bits = back.data.iter().zip(&raw.data).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
